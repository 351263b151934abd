use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure at step {step}: {detail}")]
    NumericFailure { step: usize, detail: String },

    #[error("planning error: {0}")]
    Planning(String),

    #[error("insufficient extent: {0}")]
    InsufficientExtent(String),

    #[error("trace failure: {0}")]
    TraceFailure(String),

    #[error("training failure: {0}")]
    TrainingFailure(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
