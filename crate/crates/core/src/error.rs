use thiserror::Error;

/// Errors raised by the estimator and its building blocks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("weighted covariance is singular or ill-conditioned (condition estimate {condition:e})")]
    SingularCovariance { condition: f64 },

    #[error("removing point {index} would make the covariance singular (weighted leverage {weighted_leverage})")]
    DegenerateRemoval { index: usize, weighted_leverage: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("weight vector has zero mass")]
    EmptyWeights,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("each block needs more than d = {d} rows, got {block_size}")]
    BlockTooSmall { block_size: usize, d: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
