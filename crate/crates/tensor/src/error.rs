use thiserror::Error;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch on axis `{axis}` (expected {expected}, found {found})")]
    DimensionMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{op}: expected a tensor of order {expected}, found shape {found:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        found: Vec<usize>,
    },

    #[error("shape {shape:?} holds {expected} values but {found} were supplied")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },

    #[error("invalid shape {0:?}: dimensions must be positive and order at most 4")]
    InvalidShape(Vec<usize>),

    #[error("invalid layer hyperparameter: {0}")]
    InvalidLayer(String),

    #[error("layer {index} ({layer}) in `{network}`: {source}")]
    Layer {
        network: String,
        index: usize,
        layer: String,
        #[source]
        source: Box<TensorError>,
    },

    #[error("no gradient supplied for parameter {0}")]
    MissingGradient(String),

    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
