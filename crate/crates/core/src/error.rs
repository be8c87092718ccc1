use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AfhError {
    #[error("location ({x}, {y}) outside {width}x{height} image")]
    Location {
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unsupported channel count {0}")]
    Channels(usize),

    #[error("invalid probability map: {0}")]
    ProbMap(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("shape mismatch for `{name}`: expected {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("training error: {0}")]
    Training(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("image too small for metric: {0}")]
    TooSmall(String),

    #[error("failed to decode image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = AfhError> = std::result::Result<T, E>;

pub(crate) fn dim_err(msg: impl Into<String>) -> AfhError {
    AfhError::Dimension(msg.into())
}

pub fn config_err(field: impl Into<String>, reason: impl Into<String>) -> AfhError {
    AfhError::Config {
        field: field.into(),
        reason: reason.into(),
    }
}
