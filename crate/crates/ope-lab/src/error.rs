use thiserror::Error;

/// Errors surfaced by environment construction, estimation, and reporting.
#[derive(Debug, Error)]
pub enum OpeError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("support violation: {0}")]
    SupportViolation(String),

    #[error("embedding support violation: {0}")]
    EmbeddingSupport(String),

    #[error("enumeration too large: {terms} terms exceed cap {cap}")]
    Capacity { terms: u128, cap: u64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for OpeError {
    fn from(e: serde_json::Error) -> Self {
        OpeError::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, OpeError>;
