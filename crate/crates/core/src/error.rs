use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("n_total too small for K")]
    TooFewSamples,

    #[error("insufficient samples in class {class}: need {needed}, have {available}")]
    InsufficientClass {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("undefined correlation")]
    UndefinedCorrelation,

    #[error("degenerate samples: {0}")]
    Degenerate(&'static str),

    #[error("grid mismatch")]
    GridMismatch,

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
