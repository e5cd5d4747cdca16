use std::path::PathBuf;

use depthpose_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the command line front end for exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Checkpoint,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid depth {0} mm: must be finite and positive")]
    InvalidDepth(f64),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("matrix is not a rotation (orthonormality residual {0:e})")]
    NotRotation(f64),

    #[error("{what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("{0}: input is empty")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("sample `{id}`: {message}")]
    InvalidSample { id: String, message: String },

    #[error("data: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("configuration: {0}")]
    Config(String),

    #[error("missing prerequisite checkpoint(s): {}", .0.join(", "))]
    MissingPrerequisite(Vec<String>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Tensor(TensorError::Checkpoint(_)) => ErrorCategory::Checkpoint,
            Error::Tensor(TensorError::NonFinite(_)) | Error::Numeric(_) => ErrorCategory::Numeric,
            Error::Tensor(TensorError::Layer { source, .. })
                if matches!(**source, TensorError::NonFinite(_)) =>
            {
                ErrorCategory::Numeric
            }
            Error::Tensor(TensorError::InvalidConfig(_)) | Error::Config(_) | Error::InvalidArgument(_) => {
                ErrorCategory::Config
            }
            Error::Checkpoint(_) | Error::MissingPrerequisite(_) => ErrorCategory::Checkpoint,
            _ => ErrorCategory::Data,
        }
    }
}
