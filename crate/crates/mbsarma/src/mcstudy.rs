//! Exact model simulation and the Monte Carlo parameter-recovery harness.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use rayon::prelude::*;

use crate::distributions::checked_cholesky;
use crate::error::{Error, Result};
use crate::estimation::{em_fit, EmSettings};
use crate::model::{check_roots, ComponentParams, ModelSpec, ParamVector, SeriesPanel};

/// One simulation scenario: a data-generating parameter vector, a sample
/// size and a replicate count. Covariates are Bernoulli(0.5) draws shared
/// across components; by default they are redrawn per replicate.
#[derive(Debug, Clone)]
pub struct McScenario {
    pub spec: ModelSpec,
    pub truth: ParamVector,
    pub n: usize,
    pub n_replicates: usize,
    pub seed: u64,
    pub freeze_covariates: bool,
}

/// Extra steps generated before the retained sample so zero-initialised
/// recursions reach near-stationarity.
pub fn burn_in(spec: &ModelSpec) -> usize {
    100 + spec.max_lag()
}

/// Stream-separating seed derivation for replicate `idx`.
pub fn derive_seed(base: u64, idx: u64) -> u64 {
    base.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(idx.wrapping_add(1)))
}

/// Sequential exact simulation over the rows of `x`, sharing the recursion
/// conventions of the likelihood: innovations are zero on the conditioning
/// segment and the location there is the regression part only.
///
/// Returns the panel together with the innovations drawn during generation.
pub fn simulate_panel(
    spec: &ModelSpec,
    truth: &ParamVector,
    x: &DMatrix<f64>,
    seed: u64,
) -> Result<(SeriesPanel, DMatrix<f64>)> {
    truth.validate(spec)?;
    if x.ncols() != spec.k {
        return Err(Error::DimensionMismatch(format!(
            "x has {} columns, spec has k = {}",
            x.ncols(),
            spec.k
        )));
    }
    let n = x.nrows();
    let d = spec.d;
    let m = spec.max_lag();
    if n <= m {
        return Err(Error::SeriesTooShort(format!("n = {n} must exceed m = {m}")));
    }
    let psi = truth.psi();
    let chol = checked_cholesky(&psi)?;
    let l = chol.l();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let mut y = DMatrix::zeros(n, d);
    let mut u = DMatrix::zeros(n, d);
    let mut z = DVector::zeros(d);
    let xdot = |x: &DMatrix<f64>, t: usize, beta: &[f64]| -> f64 {
        (0..spec.k).map(|l| x[(t, l)] * beta[l]).sum()
    };
    for t in 0..n {
        // conditional location under the shared recursion
        let mut mu_t = DVector::zeros(d);
        for j in 0..d {
            let c = &truth.comps[j];
            let mut mu = xdot(x, t, &c.beta) + c.eta;
            if t >= m {
                for (i, &phi) in c.phi.iter().enumerate() {
                    let lag = t - (i + 1);
                    mu += phi * (y[(lag, j)] - xdot(x, lag, &c.beta));
                }
                for (lag, &theta) in c.theta.iter().enumerate() {
                    mu += theta * u[(t - (lag + 1), j)];
                }
            }
            mu_t[j] = mu;
        }
        for j in 0..d {
            z[j] = StandardNormal.sample(&mut rng);
        }
        let corr = &l * &z;
        for j in 0..d {
            y[(t, j)] = mu_t[j] + 2.0 * (truth.alpha * corr[j] / 2.0).asinh();
            // pre-sample innovations stay at zero, exactly as the likelihood assumes
            if t >= m {
                u[(t, j)] = y[(t, j)] - mu_t[j];
            }
        }
    }
    Ok((SeriesPanel::new(y, x.clone())?, u))
}

/// Bernoulli(0.5) covariate matrix.
pub fn bernoulli_covariates(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let law = Bernoulli::new(0.5).expect("valid probability");
    DMatrix::from_fn(n, k, |_, _| if law.sample(&mut rng) { 1.0 } else { 0.0 })
}

/// Simulates one panel for the scenario: burn-in steps are generated and
/// discarded so the retained `n` rows are near-stationary.
pub fn generate_panel(scenario: &McScenario) -> Result<SeriesPanel> {
    let roots = check_roots(&scenario.spec, &scenario.truth);
    for (j, r) in roots.iter().enumerate() {
        if !r.ar_stationary || !r.ma_invertible {
            return Err(Error::InvalidParameter(format!(
                "scenario truth violates stationarity/invertibility in component {}",
                j + 1
            )));
        }
    }
    let total = scenario.n + burn_in(&scenario.spec);
    let x_seed = if scenario.freeze_covariates { scenario.seed } else { derive_seed(scenario.seed, 1_000_003) };
    let x = bernoulli_covariates(total, scenario.spec.k, x_seed);
    let (panel, _) = simulate_panel(&scenario.spec, &scenario.truth, &x, scenario.seed)?;
    Ok(panel.slice_rows(total - scenario.n, scenario.n))
}

/// Empirical bias and MSE per parameter over the converged replicates.
#[derive(Debug, Clone)]
pub struct McReport {
    pub scenario: McScenario,
    pub names: Vec<String>,
    pub bias: Vec<f64>,
    pub mse: Vec<f64>,
    pub n_converged: usize,
    pub n_failed: usize,
}

/// Runs the scenario: generates `n_replicates` panels with derived seeds,
/// fits each with the default initialisation, and aggregates bias and MSE
/// over the replicates that converged. Failures are counted, not raised.
pub fn run_study(scenario: &McScenario, settings: &EmSettings) -> Result<McReport> {
    let truth_flat = scenario.truth.flatten();
    let dim = truth_flat.len();
    let estimates: Vec<Option<Vec<f64>>> = (0..scenario.n_replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rep_scenario = scenario.clone();
            rep_scenario.seed = derive_seed(scenario.seed, rep as u64);
            if scenario.freeze_covariates {
                rep_scenario.freeze_covariates = true;
            }
            let panel = match generate_panel(&rep_scenario) {
                Ok(p) => p,
                Err(_) => return None,
            };
            match em_fit(&scenario.spec, &panel, settings, None) {
                Ok(fit) if fit.converged => Some(fit.estimates.flatten()),
                _ => None,
            }
        })
        .collect();

    let mut bias = vec![0.0; dim];
    let mut mse = vec![0.0; dim];
    let mut n_converged = 0usize;
    for est in estimates.iter().flatten() {
        n_converged += 1;
        for i in 0..dim {
            let diff = est[i] - truth_flat[i];
            bias[i] += diff;
            mse[i] += diff * diff;
        }
    }
    if n_converged == 0 {
        return Err(Error::NonConvergence("no replicate converged".into()));
    }
    for i in 0..dim {
        bias[i] /= n_converged as f64;
        mse[i] /= n_converged as f64;
    }
    Ok(McReport {
        scenario: scenario.clone(),
        names: ParamVector::names(&scenario.spec),
        bias,
        mse,
        n_converged,
        n_failed: scenario.n_replicates - n_converged,
    })
}

/// True when every parameter's MSE is nonincreasing across the sample-size
/// grid, allowing 20% Monte Carlo slack per step. Needs at least 3 sizes.
pub fn mse_trend_check(reports: &[McReport]) -> Result<bool> {
    if reports.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 sample sizes, got {}",
            reports.len()
        )));
    }
    let mut sorted: Vec<&McReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.scenario.n);
    let dim = sorted[0].mse.len();
    for w in sorted.windows(2) {
        for i in 0..dim {
            if w[1].mse[i] > 1.2 * w[0].mse[i] {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// The bivariate ARMA(1,1) recovery scenario with one Bernoulli covariate:
/// alpha 0.5; component dynamics (0.5, 0.1, 1.2, 0.3) and (0.7, 0.1, 1.2, 0.3).
pub fn bivariate_arma11_scenario(rho: f64, n: usize, n_replicates: usize, seed: u64) -> McScenario {
    let spec = ModelSpec::new(2, 1, vec![1, 1], vec![1, 1]).expect("static spec");
    let mut truth = ParamVector::neutral(&spec);
    truth.alpha = 0.5;
    truth.comps[0] = ComponentParams { phi: vec![0.5], theta: vec![0.1], beta: vec![0.3], eta: 1.2 };
    truth.comps[1] = ComponentParams { phi: vec![0.7], theta: vec![0.1], beta: vec![0.3], eta: 1.2 };
    truth.psi_lower = vec![rho];
    McScenario { spec, truth, n, n_replicates, seed, freeze_covariates: false }
}

/// The trivariate equicorrelated ARMA(1,1) recovery scenario; the third
/// component has phi = 0.6.
pub fn trivariate_arma11_scenario(rho: f64, n: usize, n_replicates: usize, seed: u64) -> McScenario {
    let spec = ModelSpec::new(3, 1, vec![1, 1, 1], vec![1, 1, 1]).expect("static spec");
    let mut truth = ParamVector::neutral(&spec);
    truth.alpha = 0.5;
    truth.comps[0] = ComponentParams { phi: vec![0.5], theta: vec![0.1], beta: vec![0.3], eta: 1.2 };
    truth.comps[1] = ComponentParams { phi: vec![0.7], theta: vec![0.1], beta: vec![0.3], eta: 1.2 };
    truth.comps[2] = ComponentParams { phi: vec![0.6], theta: vec![0.1], beta: vec![0.3], eta: 1.2 };
    truth.psi_lower = vec![rho, rho, rho];
    McScenario { spec, truth, n, n_replicates, seed, freeze_covariates: false }
}
