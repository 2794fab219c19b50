use thiserror::Error;

/// Errors surfaced by the core algorithms.
///
/// `Invalid` covers domain violations (bad dimensions, out-of-range
/// parameters, malformed inputs); `Numerical` covers failures of iterative
/// kernels (SVD non-convergence, solver budget exhaustion); `Exhausted`
/// covers randomized searches that hit their attempt budget before reaching
/// the requested target.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("budget exhausted: {0}")]
    Exhausted(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::Invalid(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CoreError::Numerical(msg.into())
    }

    pub fn exhausted(msg: impl Into<String>) -> Self {
        CoreError::Exhausted(msg.into())
    }
}
