//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("degenerate component {component}: {reason}")]
    DegenerateComponent { component: usize, reason: String },

    #[error("near-unit root in component {0}")]
    NearUnitRoot(usize),

    #[error("series too short: {0}")]
    SeriesTooShort(String),

    #[error("constant series: correlations undefined")]
    ConstantSeries,

    #[error("did not converge: {0}")]
    NonConvergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;
