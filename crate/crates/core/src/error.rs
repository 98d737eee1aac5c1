use thiserror::Error;

/// Errors raised by the engine, the oracle and the experiment runner.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FkError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("model evaluation failed: {0}")]
    ModelEvaluation(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("degenerate semigroup: {0}")]
    DegenerateSemigroup(String),

    #[error("model consistency: {0}")]
    ModelConsistency(String),

    #[error("functional {index} failed: {message}")]
    Functional { index: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T, E = FkError> = std::result::Result<T, E>;

impl From<std::io::Error> for FkError {
    fn from(e: std::io::Error) -> Self {
        FkError::Io(e.to_string())
    }
}
