use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not positive definite (Cholesky pivot {pivot} is {value:e}); use a dampening lambda > 0")]
    Singular { pivot: usize, value: f64 },

    #[error("matrix is not symmetric: |h[{row}][{col}] - h[{col}][{row}]| = {deviation:e}")]
    NotSymmetric { row: usize, col: usize, deviation: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in layer `{layer}` at flat index {index}")]
    NonFinite { layer: String, index: usize },

    #[error("non-finite activation produced by layer `{layer}`")]
    Overflow { layer: String },

    #[error("shape chain broken at layer {index} (`{layer}`): expected c_in {expected}, found {found}")]
    ShapeChain {
        index: usize,
        layer: String,
        expected: usize,
        found: usize,
    },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("bad calibration file format: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 usage/config, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_) | Error::Argument(_) | Error::Config(_) => 2,
            Error::Singular { .. } | Error::NotSymmetric { .. } | Error::Overflow { .. } => 3,
            Error::NonFinite { .. }
            | Error::ShapeChain { .. }
            | Error::CorruptCheckpoint(_)
            | Error::Format(_)
            | Error::Truncated { .. }
            | Error::Json { .. }
            | Error::Io { .. } => 4,
        }
    }
}
