//! Multivariate Birnbaum-Saunders ARMA (MBSARMA) models for correlated
//! positive time series: exact simulation, EM-based conditional maximum
//! likelihood, standard errors, forecasting, residual diagnostics, BIC
//! selection, and a Monte Carlo parameter-recovery harness.

pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod estimation;
pub mod forecasting;
pub mod mcstudy;
pub mod model;
pub mod optim;

pub use error::{Error, Result};
pub use estimation::{em_fit, EmSettings, FitResult};
pub use model::{ModelSpec, ParamVector, SeriesPanel};
