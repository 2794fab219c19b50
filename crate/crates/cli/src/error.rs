use countrank_core::CoreError;

/// Failure taxonomy mirrored in the process exit code: 1 for misuse of
/// the command line, 2 for unreadable or invalid input data, 3 for
/// algorithmic failures (non-convergence, exhausted search budgets).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    #[must_use]
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        match err {
            // By the time core code runs, flags have been validated, so a
            // rejected input traces back to file contents.
            CoreError::Invalid(msg) => CliError::Data(msg),
            CoreError::Numerical(msg) => CliError::Numerical(msg),
            CoreError::Exhausted(msg) => CliError::Numerical(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Data(err.to_string())
    }
}
