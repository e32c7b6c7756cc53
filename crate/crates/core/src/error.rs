use thiserror::Error;

/// Errors raised by the labeling library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("resource limit: {0}")]
    ResourceLimit(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("data error at index {index}: {message}")]
    Data { index: usize, message: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, FlowError>;

impl From<std::io::Error> for FlowError {
    fn from(e: std::io::Error) -> Self {
        FlowError::Io(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> FlowError {
    FlowError::InvalidArgument(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> FlowError {
    FlowError::Domain(msg.into())
}
