//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, inference, synthesis and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A vector or matrix had the wrong shape for the operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Model parameters failed validation (stochasticity, positive
    /// definiteness, finiteness).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Training diverged or produced unusable parameters.
    #[error("training failed at iteration {iteration}: {message}")]
    Training { iteration: usize, message: String },

    /// A text file failed to parse; `line` is 1-based.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// A serialized artifact declared a format version this build does not
    /// read.
    #[error("unsupported format version {found:?} (expected {expected:?})")]
    UnsupportedVersion {
        found: String,
        expected: &'static str,
    },

    /// A loaded artifact parsed but violated its invariants.
    #[error("{path}: {message}")]
    FileValidation { path: String, message: String },

    /// An I/O operation failed; `path` names the file involved.
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::File {
            path: path.display().to_string(),
            source,
        }
    }
}
