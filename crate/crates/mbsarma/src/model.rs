//! Model specification, conditional-location recursion, conditional
//! log-likelihood, and AR/MA root checks.

use nalgebra::{DMatrix, DVector};

use crate::distributions::{checked_cholesky, log_cosh};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

/// Dimensions and component-wise ARMA orders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub d: usize,
    pub k: usize,
    pub p: Vec<usize>,
    pub q: Vec<usize>,
}

impl ModelSpec {
    pub fn new(d: usize, k: usize, p: Vec<usize>, q: Vec<usize>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("d must be >= 1".into()));
        }
        if p.len() != d || q.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "order vectors have lengths {}/{}, expected {d}",
                p.len(),
                q.len()
            )));
        }
        Ok(Self { d, k, p, q })
    }

    /// m = max_j max(p_j, q_j): the number of conditioning observations.
    pub fn max_lag(&self) -> usize {
        (0..self.d).map(|j| self.p[j].max(self.q[j])).max().unwrap_or(0)
    }

    /// Number of free parameters: 1 + sum_j (p_j + q_j + k + 1) + d(d-1)/2.
    pub fn free_params(&self) -> usize {
        1 + (0..self.d).map(|j| self.p[j] + self.q[j] + self.k + 1).sum::<usize>()
            + self.d * (self.d - 1) / 2
    }

    /// Length of the dynamics block (phi, theta, beta, eta per component).
    pub fn dynamics_len(&self) -> usize {
        (0..self.d).map(|j| self.p[j] + self.q[j] + self.k + 1).sum()
    }
}

/// ARMA, regression and intercept parameters of one component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentParams {
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub eta: f64,
}

/// Full parameter vector: alpha, per-component dynamics, vech of the
/// correlation matrix (lower off-diagonal entries, column stacked).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub alpha: f64,
    pub comps: Vec<ComponentParams>,
    pub psi_lower: Vec<f64>,
}

impl ParamVector {
    /// All-zero dynamics, alpha = 1, psi = identity.
    pub fn neutral(spec: &ModelSpec) -> Self {
        let comps = (0..spec.d)
            .map(|j| ComponentParams {
                phi: vec![0.0; spec.p[j]],
                theta: vec![0.0; spec.q[j]],
                beta: vec![0.0; spec.k],
                eta: 0.0,
            })
            .collect();
        Self { alpha: 1.0, comps, psi_lower: vec![0.0; spec.d * (spec.d - 1) / 2] }
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.comps.len() != spec.d {
            return Err(Error::DimensionMismatch("component count != d".into()));
        }
        for (j, c) in self.comps.iter().enumerate() {
            if c.phi.len() != spec.p[j] || c.theta.len() != spec.q[j] || c.beta.len() != spec.k {
                return Err(Error::DimensionMismatch(format!("component {j} parameter lengths")));
            }
        }
        if self.psi_lower.len() != spec.d * (spec.d - 1) / 2 {
            return Err(Error::DimensionMismatch("psi_lower length".into()));
        }
        for &r in &self.psi_lower {
            if r.abs() >= 1.0 {
                return Err(Error::InvalidParameter(format!("|psi_jk| must be < 1, got {r}")));
            }
        }
        Ok(())
    }

    /// Rebuilds the correlation matrix from the vech entries.
    pub fn psi(&self) -> DMatrix<f64> {
        let d = self.comps.len();
        let mut m = DMatrix::identity(d, d);
        let mut idx = 0;
        for col in 0..d {
            for row in (col + 1)..d {
                m[(row, col)] = self.psi_lower[idx];
                m[(col, row)] = self.psi_lower[idx];
                idx += 1;
            }
        }
        m
    }

    /// Sets the vech entries from a correlation matrix.
    pub fn set_psi(&mut self, psi: &DMatrix<f64>) {
        let d = self.comps.len();
        let mut idx = 0;
        for col in 0..d {
            for row in (col + 1)..d {
                self.psi_lower[idx] = psi[(row, col)];
                idx += 1;
            }
        }
    }

    /// Flattens to (alpha, phi_1, theta_1, beta_1, eta_1, ..., vech(psi)).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = vec![self.alpha];
        for c in &self.comps {
            out.extend_from_slice(&c.phi);
            out.extend_from_slice(&c.theta);
            out.extend_from_slice(&c.beta);
            out.push(c.eta);
        }
        out.extend_from_slice(&self.psi_lower);
        out
    }

    pub fn from_flat(spec: &ModelSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.free_params() {
            return Err(Error::DimensionMismatch(format!(
                "flat vector has length {}, expected {}",
                flat.len(),
                spec.free_params()
            )));
        }
        let mut it = flat.iter().copied();
        let alpha = it.next().unwrap();
        let mut comps = Vec::with_capacity(spec.d);
        for j in 0..spec.d {
            let phi: Vec<f64> = (0..spec.p[j]).map(|_| it.next().unwrap()).collect();
            let theta: Vec<f64> = (0..spec.q[j]).map(|_| it.next().unwrap()).collect();
            let beta: Vec<f64> = (0..spec.k).map(|_| it.next().unwrap()).collect();
            let eta = it.next().unwrap();
            comps.push(ComponentParams { phi, theta, beta, eta });
        }
        let psi_lower: Vec<f64> = it.collect();
        Ok(Self { alpha, comps, psi_lower })
    }

    /// Flattens the dynamics block only (phi, theta, beta, eta per component).
    pub fn dynamics_flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for c in &self.comps {
            out.extend_from_slice(&c.phi);
            out.extend_from_slice(&c.theta);
            out.extend_from_slice(&c.beta);
            out.push(c.eta);
        }
        out
    }

    /// Replaces the dynamics block from a flat slice.
    pub fn set_dynamics(&mut self, spec: &ModelSpec, flat: &[f64]) -> Result<()> {
        if flat.len() != spec.dynamics_len() {
            return Err(Error::DimensionMismatch("dynamics block length".into()));
        }
        let mut it = flat.iter().copied();
        for j in 0..spec.d {
            let c = &mut self.comps[j];
            for v in c.phi.iter_mut() {
                *v = it.next().unwrap();
            }
            for v in c.theta.iter_mut() {
                *v = it.next().unwrap();
            }
            for v in c.beta.iter_mut() {
                *v = it.next().unwrap();
            }
            c.eta = it.next().unwrap();
        }
        Ok(())
    }

    /// Parameter names aligned with [`ParamVector::flatten`].
    pub fn names(spec: &ModelSpec) -> Vec<String> {
        let mut out = vec!["alpha".to_string()];
        for j in 0..spec.d {
            for i in 0..spec.p[j] {
                out.push(format!("phi_{}_{}", i + 1, j + 1));
            }
            for l in 0..spec.q[j] {
                out.push(format!("theta_{}_{}", l + 1, j + 1));
            }
            for l in 0..spec.k {
                out.push(format!("beta_{}_{}", l + 1, j + 1));
            }
            out.push(format!("eta_{}", j + 1));
        }
        for col in 0..spec.d {
            for row in (col + 1)..spec.d {
                out.push(format!("rho_{}{}", col + 1, row + 1));
            }
        }
        out
    }
}

/// Log-scale responses (n x d) and covariates (n x k), time aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPanel {
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
}

impl SeriesPanel {
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() && x.ncols() > 0 {
            return Err(Error::DimensionMismatch(format!(
                "y has {} rows but x has {}",
                y.nrows(),
                x.nrows()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("panel contains non-finite values".into()));
        }
        let x = if x.ncols() == 0 { DMatrix::zeros(y.nrows(), 0) } else { x };
        Ok(Self { y, x })
    }

    pub fn without_covariates(y: DMatrix<f64>) -> Result<Self> {
        let n = y.nrows();
        Self::new(y, DMatrix::zeros(n, 0))
    }

    pub fn len(&self) -> usize {
        self.y.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.y.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `range` of both matrices.
    pub fn slice_rows(&self, start: usize, len: usize) -> SeriesPanel {
        SeriesPanel {
            y: self.y.rows(start, len).into_owned(),
            x: self.x.rows(start, len).into_owned(),
        }
    }

    /// x_t' beta_j for row t.
    pub(crate) fn xdot(&self, t: usize, beta: &[f64]) -> f64 {
        let mut acc = 0.0;
        for l in 0..self.x.ncols() {
            acc += self.x[(t, l)] * beta[l];
        }
        acc
    }
}

/// Conditional locations and innovation residuals from the ARMA recursion.
///
/// Rows `0..valid_from` are the conditioning segment: `u` is zero there by
/// convention and `mu` is NaN (never read by the likelihood).
#[derive(Debug, Clone, PartialEq)]
pub struct LocationState {
    pub mu: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub valid_from: usize,
}

fn check_dims(spec: &ModelSpec, params: &ParamVector, panel: &SeriesPanel) -> Result<()> {
    params.validate(spec)?;
    if panel.dim() != spec.d {
        return Err(Error::DimensionMismatch(format!(
            "panel has {} components, spec has {}",
            panel.dim(),
            spec.d
        )));
    }
    if panel.n_covariates() != spec.k {
        return Err(Error::DimensionMismatch(format!(
            "panel has {} covariates, spec has {}",
            panel.n_covariates(),
            spec.k
        )));
    }
    Ok(())
}

/// Runs the conditional-location recursion.
///
/// For t > m (0-based rows m..n):
/// `mu_tj = x_t' beta_j + eta_j + sum_i phi_ij (Y_{t-i,j} - x_{t-i}' beta_j)
///        + sum_l theta_lj u_{t-l,j}` and `u_tj = Y_tj - mu_tj`.
/// The current innovation is excluded from the location; pre-sample
/// innovations are zero.
pub fn compute_locations(
    spec: &ModelSpec,
    params: &ParamVector,
    panel: &SeriesPanel,
) -> Result<LocationState> {
    check_dims(spec, params, panel)?;
    let n = panel.len();
    let m = spec.max_lag();
    if n <= m {
        return Err(Error::SeriesTooShort(format!("n = {n} must exceed m = {m}")));
    }
    let d = spec.d;
    let mut mu = DMatrix::from_element(n, d, f64::NAN);
    let mut u = DMatrix::zeros(n, d);
    for t in m..n {
        for j in 0..d {
            let c = &params.comps[j];
            let mut tau = c.eta;
            for (i, &phi) in c.phi.iter().enumerate() {
                let lag = t - (i + 1);
                tau += phi * (panel.y[(lag, j)] - panel.xdot(lag, &c.beta));
            }
            for (l, &theta) in c.theta.iter().enumerate() {
                tau += theta * u[(t - (l + 1), j)];
            }
            let m_tj = panel.xdot(t, &c.beta) + tau;
            mu[(t, j)] = m_tj;
            u[(t, j)] = panel.y[(t, j)] - m_tj;
        }
    }
    Ok(LocationState { mu, u, valid_from: m })
}

/// Conditional log-likelihood given the first `m` observations.
pub fn conditional_loglik(spec: &ModelSpec, params: &ParamVector, panel: &SeriesPanel) -> Result<f64> {
    conditional_loglik_from(spec, params, panel, spec.max_lag())
}

/// Same as [`conditional_loglik`] but conditioning on the first `m_eff >= m`
/// observations, so that candidate models of different orders can be scored
/// on a shared effective sample.
pub fn conditional_loglik_from(
    spec: &ModelSpec,
    params: &ParamVector,
    panel: &SeriesPanel,
    m_eff: usize,
) -> Result<f64> {
    let m = spec.max_lag();
    if m_eff < m {
        return Err(Error::InvalidParameter(format!("m_eff = {m_eff} below model m = {m}")));
    }
    let n = panel.len();
    if n <= m_eff {
        return Err(Error::SeriesTooShort(format!("n = {n} must exceed m_eff = {m_eff}")));
    }
    let locs = compute_locations(spec, params, panel)?;
    let d = spec.d;
    let psi = params.psi();
    let chol = checked_cholesky(&psi)?;
    let l = chol.l_dirty();
    let half_log_det: f64 = (0..d).map(|j| l[(j, j)].ln()).sum();
    let ln_alpha = params.alpha.ln();
    let const_t =
        -0.5 * d as f64 * LN_2PI - d as f64 * std::f64::consts::LN_2 - half_log_det;

    let mut total = 0.0;
    let mut a = DVector::zeros(d);
    for t in m_eff..n {
        let mut sum_log_c = 0.0;
        for j in 0..d {
            let w = (panel.y[(t, j)] - locs.mu[(t, j)]) / 2.0;
            a[j] = 2.0 / params.alpha * w.sinh();
            sum_log_c += std::f64::consts::LN_2 - ln_alpha + log_cosh(w);
        }
        let w = l.solve_lower_triangular(&a).expect("pivots checked");
        total += sum_log_c + const_t - 0.5 * w.dot(&w);
    }
    if total.is_nan() {
        return Err(Error::InvalidParameter("log-likelihood is NaN".into()));
    }
    Ok(total)
}

/// Stationarity/invertibility report for one component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentRoots {
    pub ar_stationary: bool,
    pub ma_invertible: bool,
    pub min_ar_root_modulus: f64,
    pub min_ma_root_modulus: f64,
    /// min over both polynomials
    pub min_root_modulus: f64,
}

/// Smallest root modulus of 1 + c_1 z + ... + c_k z^k via the companion matrix.
/// Returns +inf for the empty polynomial.
fn min_root_modulus(coeffs: &[f64]) -> f64 {
    let mut deg = coeffs.len();
    while deg > 0 && coeffs[deg - 1].abs() < 1e-14 {
        deg -= 1;
    }
    if deg == 0 {
        return f64::INFINITY;
    }
    // monic form z^deg + a_{deg-1} z^{deg-1} + ... + a_0 with a_i = c_i / c_deg
    // (c_0 = 1 is the constant term of the lag polynomial).
    let lead = coeffs[deg - 1];
    let mut comp = DMatrix::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    comp[(0, deg - 1)] = -1.0 / lead;
    for i in 1..deg {
        comp[(i, deg - 1)] = -coeffs[i - 1] / lead;
    }
    comp.complex_eigenvalues().iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min)
}

/// Checks the roots of the AR polynomial 1 - sum phi_i z^i and the MA
/// polynomial 1 + sum theta_l z^l for every component. A component is
/// stationary/invertible when all moduli exceed one.
pub fn check_roots(spec: &ModelSpec, params: &ParamVector) -> Vec<ComponentRoots> {
    (0..spec.d)
        .map(|j| {
            let ar: Vec<f64> = params.comps[j].phi.iter().map(|&v| -v).collect();
            let ma: Vec<f64> = params.comps[j].theta.clone();
            let ar_mod = min_root_modulus(&ar);
            let ma_mod = min_root_modulus(&ma);
            ComponentRoots {
                ar_stationary: ar_mod > 1.0,
                ma_invertible: ma_mod > 1.0,
                min_ar_root_modulus: ar_mod,
                min_ma_root_modulus: ma_mod,
                min_root_modulus: ar_mod.min(ma_mod),
            }
        })
        .collect()
}

/// Marginal mean of each component under stationarity.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconditionalMean {
    pub mean: DVector<f64>,
    /// |1 - sum phi_ij| < 0.05 for the component
    pub near_unit_root: Vec<bool>,
}

/// x_t' beta_j + eta_j / (1 - sum_i phi_ij) per component.
pub fn unconditional_mean(
    spec: &ModelSpec,
    params: &ParamVector,
    x_t: &DVector<f64>,
) -> Result<UnconditionalMean> {
    if x_t.len() != spec.k {
        return Err(Error::DimensionMismatch(format!(
            "x_t has length {}, expected {}",
            x_t.len(),
            spec.k
        )));
    }
    let mut mean = DVector::zeros(spec.d);
    let mut near = vec![false; spec.d];
    for j in 0..spec.d {
        let c = &params.comps[j];
        let denom = 1.0 - c.phi.iter().sum::<f64>();
        if denom.abs() < 1e-12 {
            return Err(Error::NearUnitRoot(j));
        }
        near[j] = denom.abs() < 0.05;
        let mut xb = 0.0;
        for l in 0..spec.k {
            xb += x_t[l] * c.beta[l];
        }
        mean[j] = xb + c.eta / denom;
    }
    Ok(UnconditionalMean { mean, near_unit_root: near })
}
