use thiserror::Error;

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("pooling needs even spatial dimensions, got {height}x{width}")]
    OddDimension { height: usize, width: usize },
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),
    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),
    #[error("backward called without a recorded forward pass")]
    NoForwardState,
    #[error("chunk length must be at least 1, got {0}")]
    BadChunkLength(usize),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NnError {
    pub(crate) fn shape(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        NnError::ShapeMismatch {
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }
}
