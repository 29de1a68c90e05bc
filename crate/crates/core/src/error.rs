use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("matrix is not positive semidefinite (smallest pivot {0:e})")]
    NotPsd(f64),
    #[error("mixed gradient availability: gradients required for every observation")]
    MixedGradients,
    #[error("missing gradients: {0}")]
    MissingGradients(String),
    #[error("feasible set excludes every argmin")]
    NoFeasibleArgmin,
    #[error("quadratic program did not converge within {0} iterations")]
    SolverMaxIterations(usize),
    #[error("non-finite value during training: {0}")]
    NonFinite(String),
    #[error("grid too large: {0} points (limit 10^7)")]
    GridTooLarge(u128),
    #[error("trainer failed: {0}")]
    Trainer(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
