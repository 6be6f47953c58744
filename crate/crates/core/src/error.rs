use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what} in {path}: {detail}")]
    Parse {
        what: &'static str,
        path: PathBuf,
        detail: String,
    },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("annotation out of range: {0}")]
    AnnotationOutOfRange(String),

    #[error("invalid record field `{field}`: {detail}")]
    InvalidRecord { field: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid band: {0}")]
    InvalidBand(String),

    #[error("zero-power noise")]
    ZeroPowerNoise,

    #[error("zero-power signal")]
    ZeroPowerSignal,

    #[error("undefined similarity: zero vector")]
    UndefinedSimilarity,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("task mismatch: expected {expected}, found {found}")]
    TaskMismatch { expected: String, found: String },

    #[error("no records")]
    NoRecords,

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unsorted events: {0}")]
    Unsorted(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
