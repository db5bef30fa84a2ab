//! BFGS quasi-Newton minimiser with backtracking Armijo line search.
//!
//! The inverse Hessian starts at the identity and is reset whenever the
//! search direction fails to be a descent direction. Gradients are only
//! evaluated at accepted iterates, so objectives may return +inf at
//! infeasible points and the line search will back away.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct BfgsSettings {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub armijo_c1: f64,
    pub backtrack_shrink: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsSettings {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iters: 200,
            armijo_c1: 1e-4,
            backtrack_shrink: 0.5,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BfgsStatus {
    GradConverged,
    MaxIters,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub status: BfgsStatus,
}

/// Minimises `f` starting from `x0`. `grad` must return the exact gradient
/// at feasible points; `f` may return +inf away from the feasible region.
pub fn minimize<F, G>(f: F, grad: G, x0: &[f64], settings: &BfgsSettings) -> BfgsResult
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice());
    if n == 0 || !fx.is_finite() {
        return BfgsResult { x: x0.to_vec(), f: fx, iterations: 0, status: BfgsStatus::LineSearchFailed };
    }
    let mut g = DVector::from_vec(grad(x.as_slice()));
    let mut h_inv = DMatrix::<f64>::identity(n, n);

    for iter in 0..settings.max_iters {
        if g.norm() < settings.grad_tol {
            return BfgsResult {
                x: x.as_slice().to_vec(),
                f: fx,
                iterations: iter,
                status: BfgsStatus::GradConverged,
            };
        }

        let mut p = -(&h_inv * &g);
        let mut slope = g.dot(&p);
        if slope >= 0.0 {
            // reset the curvature model and fall back to steepest descent
            h_inv = DMatrix::identity(n, n);
            p = -g.clone();
            slope = -g.dot(&g);
        }

        // backtracking Armijo search
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..settings.max_backtracks {
            let x_new = &x + step * &p;
            let f_new = f(x_new.as_slice());
            if f_new.is_finite() && f_new <= fx + settings.armijo_c1 * step * slope {
                accepted = Some((x_new, f_new));
                break;
            }
            step *= settings.backtrack_shrink;
        }
        let Some((x_new, f_new)) = accepted else {
            return BfgsResult {
                x: x.as_slice().to_vec(),
                f: fx,
                iterations: iter,
                status: BfgsStatus::LineSearchFailed,
            };
        };

        let g_new = DVector::from_vec(grad(x_new.as_slice()));
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            // H <- (I - s y'/sy) H (I - y s'/sy) + s s'/sy
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            let ss = &s * s.transpose();
            let hys = &hy * s.transpose();
            h_inv += (1.0 + rho * yhy) * rho * &ss - rho * (&hys + hys.transpose());
        }

        x = x_new;
        fx = f_new;
        g = g_new;
    }

    BfgsResult {
        x: x.as_slice().to_vec(),
        f: fx,
        iterations: settings.max_iters,
        status: BfgsStatus::MaxIters,
    }
}
