//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by the library.
///
/// The CLI maps these onto its exit codes: configuration problems exit 2,
/// data/format problems exit 3 and training failures exit 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or layer shape mismatch.
    #[error("shape error in {context}: {message}")]
    Shape { context: String, message: String },

    /// Invalid configuration or argument value.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed input data (dataset files, archives, manifests).
    #[error("data format error in {path:?} at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    /// Consistency failure between persisted artifacts.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Training diverged or hit a non-finite value.
    #[error("training failure at epoch {epoch}, step {step}: {message}")]
    Train {
        epoch: usize,
        step: usize,
        message: String,
    },

    /// Non-finite value outside of training.
    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("unknown name {name:?}; known: {known}")]
    UnknownName { name: String, known: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }

    pub fn format(path: impl Into<PathBuf>, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
