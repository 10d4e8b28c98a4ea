use std::io;

use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside its valid domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("malformed encoding: {0}")]
    MalformedEncoding(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The host cannot provide hardware performance counters.
    #[error("performance counters unsupported: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
