use alloc::string::String;

/// Errors raised by the estimation and testing routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty dataset")]
    EmptyData,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("information matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    SingularInformation { condition: f64 },
    #[error("variance matrix is singular")]
    SingularVariance,
    #[error("fit did not converge after {iterations} iterations (score norm {score_norm:e})")]
    NotConverged { iterations: usize, score_norm: f64 },
    #[error("{dropped} of {total} bootstrap replicates dropped (limit 5%)")]
    TooManyDropped { dropped: usize, total: usize },
    #[error("{excluded} of {total} Monte Carlo repetitions failed (limit 2%)")]
    TooManyExclusions { excluded: usize, total: usize },
    #[error("estimated proportion of category {0} is zero")]
    ZeroEstimatedCell(usize),
    #[error("estimated margin is zero ({0})")]
    ZeroMargin(String),
    #[error("undefined design effect for category {0}: estimated proportion is 0 or 1")]
    UndefinedDesignEffect(usize),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
