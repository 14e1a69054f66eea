use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unreadable file {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("unwritable path {path}: {reason}")]
    UnwritablePath { path: PathBuf, reason: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("payload too large for image size: need {needed} coefficients, annulus holds {capacity}")]
    CapacityExceeded { needed: usize, capacity: usize },

    #[error("invalid attack spec `{spec}`: {reason}")]
    InvalidAttack { spec: String, reason: String },

    #[error("single-class input: {0}")]
    SingleClass(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("cannot certify FPR target {target}: need at least {needed} negatives, have {available}")]
    InsufficientNegatives {
        target: f64,
        needed: usize,
        available: usize,
    },

    #[error("uncalibrated operating point: {0}")]
    Uncalibrated(String),

    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("leakage: {0}")]
    Leakage(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("io error on {path}: {source}")]
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
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
