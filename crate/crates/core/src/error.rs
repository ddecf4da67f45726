use thiserror::Error;

/// Errors raised by the clustering pipeline and its numeric building blocks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnactError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
}

pub type Result<T> = std::result::Result<T, EnactError>;

pub(crate) fn invalid(msg: impl Into<String>) -> EnactError {
    EnactError::InvalidArgument(msg.into())
}

pub(crate) fn mismatch(expected: impl ToString, actual: impl ToString) -> EnactError {
    EnactError::ShapeMismatch {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
