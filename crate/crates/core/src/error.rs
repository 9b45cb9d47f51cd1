use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A value fell outside the reachable range of an inverse map.
    #[error("range error: {0}")]
    Range(String),

    /// A regression could not be fitted.
    #[error("fit error: {0}")]
    Fit(String),

    /// A generated or loaded artifact failed validation.
    #[error("validation failed: {0}")]
    Validation(String),

    /// A file could not be parsed; `line` is 1-based.
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("unsupported schema version {found:?} (expected {expected:?})")]
    Schema { found: String, expected: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
