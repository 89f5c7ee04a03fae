//! Error types shared across the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An operation received tensors whose shapes do not fit its contract.
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },

    /// An argument violated a documented precondition.
    #[error("invalid argument to {op}: {details}")]
    InvalidArg { op: &'static str, details: String },

    /// A forward pass produced NaN or Inf.
    #[error("non-finite value detected in {context}")]
    NonFinite { context: String },

    /// Binary tensor file could not be decoded.
    #[error("tensor parse error at byte {offset}: {message}")]
    TensorParse { offset: u64, message: String },

    /// Dataset manifest was malformed or has an unsupported version.
    #[error("manifest error: {0}")]
    Manifest(String),

    /// Experiment configuration failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// Training aborted (e.g. divergence).
    #[error("training aborted at {context}: {message}")]
    Training { context: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, details: details.into() }
    }

    pub fn invalid(op: &'static str, details: impl Into<String>) -> Self {
        Error::InvalidArg { op, details: details.into() }
    }

    /// Stable machine-readable discriminant, used by the CLI error envelope.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidArg { .. } => "invalid_argument",
            Error::NonFinite { .. } => "non_finite",
            Error::TensorParse { .. } => "tensor_parse",
            Error::Manifest(_) => "manifest",
            Error::Config(_) => "config",
            Error::Training { .. } => "training",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
