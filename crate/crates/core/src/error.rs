use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SacError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unknown token {token:?} in class name {name:?}")]
    UnknownToken { token: String, name: String },

    #[error("no activated region: heatmap has no positive value")]
    NoActivatedRegion,

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("manifest {}:{line}: {msg}", path.display())]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config key {key:?}: {msg}")]
    Config { key: String, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("image {}: {msg}", path.display())]
    Image { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SacError {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        SacError::ShapeMismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            SacError::ShapeMismatch { .. } => "shape",
            SacError::InvalidArgument(_) => "invalid-argument",
            SacError::NonFinite(_) => "non-finite",
            SacError::UnknownToken { .. } => "unknown-token",
            SacError::NoActivatedRegion => "no-activated-region",
            SacError::MissingFile(_) => "missing-file",
            SacError::Manifest { .. } => "manifest",
            SacError::Config { .. } => "config",
            SacError::Checkpoint(_) => "checkpoint",
            SacError::Image { .. } => "image",
            SacError::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, SacError>;
