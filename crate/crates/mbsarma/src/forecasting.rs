//! Recursive point prediction, rolling one-step evaluation and the naive
//! and Gaussian ARMAX benchmarks.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimation::{cls_fit_component, EmSettings, FitResult};
use crate::model::{compute_locations, ModelSpec, ParamVector, SeriesPanel};

/// Point forecasts on the log scale and the raw scale.
#[derive(Debug, Clone)]
pub struct ForecastResult {
    pub y_hat: DMatrix<f64>,
    pub t_hat: DMatrix<f64>,
}

/// Recursive h-step-ahead prediction from the end of `panel`.
///
/// One step ahead the recursion uses observed history; further out it
/// substitutes predictions for unobserved responses and zero for future
/// innovations. `future_x` must supply covariates for all `horizon` steps.
pub fn forecast(
    fit: &FitResult,
    panel: &SeriesPanel,
    future_x: &DMatrix<f64>,
    horizon: usize,
) -> Result<ForecastResult> {
    let spec = &fit.spec;
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    if future_x.nrows() < horizon || future_x.ncols() != spec.k {
        return Err(Error::DimensionMismatch(format!(
            "future_x is {}x{}, need {horizon}x{}",
            future_x.nrows(),
            future_x.ncols(),
            spec.k
        )));
    }
    let locs = compute_locations(spec, &fit.estimates, panel)?;
    let n = panel.len();
    let d = spec.d;
    let params = &fit.estimates;

    let xdot_future = |s: usize, beta: &[f64]| -> f64 {
        (0..spec.k).map(|l| future_x[(s, l)] * beta[l]).sum()
    };
    let mut y_hat = DMatrix::zeros(horizon, d);
    for s in 0..horizon {
        for j in 0..d {
            let c = &params.comps[j];
            let mut mu = xdot_future(s, &c.beta) + c.eta;
            for (i, &phi) in c.phi.iter().enumerate() {
                // global 0-based index of Y_{n+s-i} is n + s - (i+1)
                let g = n + s - (i + 1);
                let detrended = if g < n {
                    panel.y[(g, j)] - panel.xdot(g, &c.beta)
                } else {
                    y_hat[(g - n, j)] - xdot_future(g - n, &c.beta)
                };
                mu += phi * detrended;
            }
            for (l, &theta) in c.theta.iter().enumerate() {
                let g = n + s - (l + 1);
                if g < n {
                    mu += theta * locs.u[(g, j)];
                }
                // future innovations are set to zero
            }
            y_hat[(s, j)] = mu;
        }
    }
    let t_hat = y_hat.map(f64::exp);
    Ok(ForecastResult { y_hat, t_hat })
}

/// Per-component forecast accuracy on the log scale.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rmse: Vec<f64>,
    pub mae: Vec<f64>,
    /// one-step predictions over the evaluation window (test_len x d)
    pub y_hat: DMatrix<f64>,
}

fn metrics_from_errors(y_hat: &DMatrix<f64>, observed: &DMatrix<f64>) -> EvalReport {
    let (rows, d) = (y_hat.nrows(), y_hat.ncols());
    let mut rmse = Vec::with_capacity(d);
    let mut mae = Vec::with_capacity(d);
    for j in 0..d {
        let mut se = 0.0;
        let mut ae = 0.0;
        for t in 0..rows {
            let e = observed[(t, j)] - y_hat[(t, j)];
            se += e * e;
            ae += e.abs();
        }
        rmse.push((se / rows as f64).sqrt());
        mae.push(ae / rows as f64);
    }
    EvalReport { rmse, mae, y_hat: y_hat.clone() }
}

/// Rolling-origin one-step evaluation over the last `test_len` rows with the
/// parameters frozen at the fit: each prediction uses the true observed
/// history through the previous time point, with no re-fitting.
pub fn rolling_one_step_eval(
    fit: &FitResult,
    full_panel: &SeriesPanel,
    test_len: usize,
) -> Result<EvalReport> {
    let d = fit.spec.d;
    if test_len == 0 {
        return Ok(EvalReport { rmse: vec![], mae: vec![], y_hat: DMatrix::zeros(0, d) });
    }
    let n = full_panel.len();
    let m = fit.spec.max_lag();
    if test_len + m + 1 >= n {
        return Err(Error::InvalidParameter(format!(
            "test_len = {test_len} too large for n = {n}, m = {m}"
        )));
    }
    // the recursion's mu_t depends on data through t-1 only, so the location
    // rows over the test window are exactly the rolling one-step predictions
    let locs = compute_locations(&fit.spec, &fit.estimates, full_panel)?;
    let start = n - test_len;
    let y_hat = locs.mu.rows(start, test_len).into_owned();
    let observed = full_panel.y.rows(start, test_len).into_owned();
    Ok(metrics_from_errors(&y_hat, &observed))
}

/// Naive predictor modes: rolling repeats the previous observation for each
/// test time; fixed-origin repeats the last training observation for the
/// whole window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NaiveMode {
    RollingOrigin,
    FixedOrigin,
}

/// Naive predictions over the last `test_len` rows.
pub fn naive_forecast(panel: &SeriesPanel, test_len: usize, mode: NaiveMode) -> Result<DMatrix<f64>> {
    let n = panel.len();
    let d = panel.dim();
    if test_len == 0 {
        return Ok(DMatrix::zeros(0, d));
    }
    if test_len >= n {
        return Err(Error::InvalidParameter(format!("test_len = {test_len} >= n = {n}")));
    }
    let start = n - test_len;
    let mut y_hat = DMatrix::zeros(test_len, d);
    for s in 0..test_len {
        for j in 0..d {
            let src = match mode {
                NaiveMode::RollingOrigin => start + s - 1,
                NaiveMode::FixedOrigin => start - 1,
            };
            y_hat[(s, j)] = panel.y[(src, j)];
        }
    }
    Ok(y_hat)
}

/// Naive predictor accuracy under the chosen mode.
pub fn naive_eval(panel: &SeriesPanel, test_len: usize, mode: NaiveMode) -> Result<EvalReport> {
    let d = panel.dim();
    if test_len == 0 {
        return Ok(EvalReport { rmse: vec![], mae: vec![], y_hat: DMatrix::zeros(0, d) });
    }
    let y_hat = naive_forecast(panel, test_len, mode)?;
    let observed = panel.y.rows(panel.len() - test_len, test_len).into_owned();
    Ok(metrics_from_errors(&y_hat, &observed))
}

/// Gaussian ARMAX benchmark: fits each component separately by conditional
/// least squares on the training window and evaluates it under the same
/// rolling one-step protocol.
pub fn gaussian_armax_benchmark(
    spec: &ModelSpec,
    panel: &SeriesPanel,
    test_len: usize,
    settings: &EmSettings,
) -> Result<EvalReport> {
    let n = panel.len();
    let d = spec.d;
    if test_len == 0 {
        return Ok(EvalReport { rmse: vec![], mae: vec![], y_hat: DMatrix::zeros(0, d) });
    }
    if test_len + spec.max_lag() + 1 >= n {
        return Err(Error::InvalidParameter(format!(
            "test_len = {test_len} too large for n = {n}"
        )));
    }
    let train = panel.slice_rows(0, n - test_len);
    let mut params = ParamVector::neutral(spec);
    for j in 0..d {
        let col = train.y.column(j).into_owned();
        params.comps[j] = cls_fit_component(&col, &train.x, spec.p[j], spec.q[j], settings)?;
    }
    let locs = compute_locations(spec, &params, panel)?;
    let start = n - test_len;
    let y_hat = locs.mu.rows(start, test_len).into_owned();
    let observed = panel.y.rows(start, test_len).into_owned();
    Ok(metrics_from_errors(&y_hat, &observed))
}
