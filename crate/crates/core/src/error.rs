use std::io;

use thiserror::Error;

/// Failures while reading a dataset or checkpoint file.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("array `{array}` holds {found} elements but the manifest implies {expected}")]
    ShapeMismatch { array: String, found: u64, expected: u64 },
    #[error("file ends early while reading {0}")]
    Truncated(String),
    #[error("{0} trailing bytes after the last array")]
    TrailingBytes(u64),
    #[error("malformed manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
