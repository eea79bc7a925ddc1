use std::path::PathBuf;

use crate::grid::GridDims;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: GridDims, actual: GridDims },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("invalid JSON in {path}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by a violated shape or precondition, as
    /// opposed to unreadable or unparsable input.
    pub fn is_precondition(&self) -> bool {
        matches!(self, Error::DimensionMismatch { .. } | Error::InvalidInput(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub fn ensure_same_dims(expected: GridDims, actual: GridDims) -> Result<()> {
    if expected.shape() != actual.shape() {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}
