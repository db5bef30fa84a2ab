//! Birnbaum-Saunders, log-BS and multivariate log-BS distributions.
//!
//! The multivariate law is defined through the sinh standardisation: a
//! vector `y` follows a d-variate log-BS distribution with shape `alpha`,
//! location `mu` and correlation `psi` exactly when
//! `a_j = (2/alpha) sinh((y_j - mu_j)/2)` is N_d(0, psi).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Smallest accepted Cholesky pivot; anything below is treated as singular.
pub(crate) const CHOL_PIVOT_MIN: f64 = 1e-10;

const LN_2PI: f64 = 1.8378770664093453;

/// Shape/scale parameters of the raw-scale BS distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BsParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be > 0, got {alpha}")));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
        }
        Ok(Self { alpha, beta })
    }
}

/// Shape/location parameters of the log-BS distribution (`mu = log beta`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogBsParams {
    pub alpha: f64,
    pub mu: f64,
}

impl LogBsParams {
    pub fn new(alpha: f64, mu: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be > 0, got {alpha}")));
        }
        if !mu.is_finite() {
            return Err(Error::InvalidParameter(format!("mu must be finite, got {mu}")));
        }
        Ok(Self { alpha, mu })
    }
}

/// Common shape, location vector and correlation matrix of the d-variate log-BS law.
#[derive(Debug, Clone, PartialEq)]
pub struct MvLogBsParams {
    pub alpha: f64,
    pub mu: DVector<f64>,
    pub psi: DMatrix<f64>,
}

impl MvLogBsParams {
    /// Validates shapes and the correlation-matrix invariants (symmetry, unit
    /// diagonal). Positive definiteness is checked at first factorisation.
    pub fn new(alpha: f64, mu: DVector<f64>, psi: DMatrix<f64>) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be > 0, got {alpha}")));
        }
        let d = mu.len();
        if psi.nrows() != d || psi.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "psi is {}x{}, expected {d}x{d}",
                psi.nrows(),
                psi.ncols()
            )));
        }
        let mut psi = psi;
        for j in 0..d {
            if (psi[(j, j)] - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "psi diagonal entry {j} is {}, must be 1",
                    psi[(j, j)]
                )));
            }
            psi[(j, j)] = 1.0;
            for l in 0..j {
                if (psi[(j, l)] - psi[(l, j)]).abs() > 1e-12 {
                    return Err(Error::InvalidParameter("psi not symmetric".into()));
                }
                let avg = 0.5 * (psi[(j, l)] + psi[(l, j)]);
                psi[(j, l)] = avg;
                psi[(l, j)] = avg;
            }
        }
        Ok(Self { alpha, mu, psi })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Cholesky factorisation with a hard near-singularity check: the pivots
/// (diagonal of the LDL' factor, i.e. the squared diagonal of L) must stay
/// above [`CHOL_PIVOT_MIN`].
pub(crate) fn checked_cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorisation failed".into()))?;
    let l = chol.l_dirty();
    for j in 0..m.nrows() {
        if l[(j, j)] * l[(j, j)] < CHOL_PIVOT_MIN {
            return Err(Error::NotPositiveDefinite(format!(
                "Cholesky pivot {j} below {CHOL_PIVOT_MIN:e}"
            )));
        }
    }
    Ok(chol)
}

/// log cosh(x) without overflow: |x| + log1p(e^{-2|x|}) - log 2.
pub(crate) fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

pub(crate) fn norm_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub(crate) fn norm_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Raw-scale BS density.
pub fn bs_pdf(t: f64, p: &BsParams) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("bs_pdf requires t > 0, got {t}")));
    }
    // Evaluated in log scale and exponentiated; the bracket is computed from
    // r = beta/t which never overflows for t > 0.
    let r = p.beta / t;
    let log_bracket = (r.sqrt() + r.powf(1.5)).ln();
    let log_norm = -(2.0 * p.alpha * p.beta).ln() - 0.5 * LN_2PI;
    let exponent = -(t / p.beta + r - 2.0) / (2.0 * p.alpha * p.alpha);
    Ok((log_norm + log_bracket + exponent).exp())
}

/// Raw-scale BS distribution function.
pub fn bs_cdf(t: f64, p: &BsParams) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("bs_cdf requires t > 0, got {t}")));
    }
    let z = ((t / p.beta).sqrt() - (p.beta / t).sqrt()) / p.alpha;
    Ok(norm_cdf(z))
}

/// log-BS log-density.
pub fn logbs_logpdf(y: f64, p: &LogBsParams) -> f64 {
    let w = (y - p.mu) / 2.0;
    let s = w.sinh();
    -p.alpha.ln() - 0.5 * LN_2PI - 2.0 / (p.alpha * p.alpha) * s * s + log_cosh(w)
}

/// log-BS density.
pub fn logbs_pdf(y: f64, p: &LogBsParams) -> f64 {
    logbs_logpdf(y, p).exp()
}

/// log-BS distribution function.
pub fn logbs_cdf(y: f64, p: &LogBsParams) -> f64 {
    norm_cdf(2.0 / p.alpha * ((y - p.mu) / 2.0).sinh())
}

/// log-BS quantile: mu + 2 asinh(alpha * Phi^{-1}(prob) / 2).
pub fn logbs_quantile(prob: f64, p: &LogBsParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::InvalidParameter(format!("probability out of [0,1]: {prob}")));
    }
    Ok(p.mu + 2.0 * (p.alpha * norm_quantile(prob) / 2.0).asinh())
}

/// Componentwise sinh standardisation; the result is N_d(0, psi) under the model.
pub fn standardize(y: &DVector<f64>, p: &MvLogBsParams) -> Result<DVector<f64>> {
    if y.len() != p.dim() {
        return Err(Error::DimensionMismatch(format!(
            "y has length {}, expected {}",
            y.len(),
            p.dim()
        )));
    }
    Ok(DVector::from_fn(p.dim(), |j, _| {
        2.0 / p.alpha * ((y[j] - p.mu[j]) / 2.0).sinh()
    }))
}

/// Inverse of [`standardize`]: y_j = mu_j + 2 asinh(alpha z_j / 2).
pub fn destandardize(z: &DVector<f64>, p: &MvLogBsParams) -> Result<DVector<f64>> {
    if z.len() != p.dim() {
        return Err(Error::DimensionMismatch(format!(
            "z has length {}, expected {}",
            z.len(),
            p.dim()
        )));
    }
    Ok(DVector::from_fn(p.dim(), |j, _| {
        p.mu[j] + 2.0 * (p.alpha * z[j] / 2.0).asinh()
    }))
}

/// Joint log-density of the d-variate log-BS distribution.
///
/// The quadratic form is computed by solving triangular systems from the
/// Cholesky factor of `psi`; the inverse is never formed.
pub fn mvlogbs_logpdf(y: &DVector<f64>, p: &MvLogBsParams) -> Result<f64> {
    let d = p.dim();
    if y.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "y has length {}, expected {d}",
            y.len()
        )));
    }
    let chol = checked_cholesky(&p.psi)?;
    let mut sum_log_c = 0.0;
    let mut a = DVector::zeros(d);
    for j in 0..d {
        let w = (y[j] - p.mu[j]) / 2.0;
        a[j] = 2.0 / p.alpha * w.sinh();
        sum_log_c += std::f64::consts::LN_2 - p.alpha.ln() + log_cosh(w);
    }
    let half_log_det: f64 = (0..d).map(|j| chol.l_dirty()[(j, j)].ln()).sum();
    let w = chol.l_dirty().solve_lower_triangular(&a).expect("pivots checked");
    let quad = w.dot(&w);
    Ok(sum_log_c
        - 0.5 * d as f64 * LN_2PI
        - d as f64 * std::f64::consts::LN_2
        - half_log_det
        - 0.5 * quad)
}

/// Draws `count` rows from the d-variate log-BS law. Deterministic given `seed`.
pub fn sample_mvlogbs(count: usize, p: &MvLogBsParams, seed: u64) -> Result<DMatrix<f64>> {
    let d = p.dim();
    let chol = checked_cholesky(&p.psi)?;
    let l = chol.l();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(count, d);
    let mut z = DVector::zeros(d);
    for i in 0..count {
        for j in 0..d {
            z[j] = StandardNormal.sample(&mut rng);
        }
        let corr = &l * &z;
        for j in 0..d {
            out[(i, j)] = p.mu[j] + 2.0 * (p.alpha * corr[j] / 2.0).asinh();
        }
    }
    Ok(out)
}
