use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The reference distribution equals the uniform distribution, so the
    /// normalized score has a zero denominator.
    #[error("degenerate reference distribution: ground truth is uniform")]
    DegenerateReference,

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("correlation undefined: zero variance")]
    UndefinedCorrelation,

    #[error("transport error: {0}")]
    Transport(String),

    #[error("could not parse a state from completion {raw:?}")]
    Parse { raw: String },

    #[error("no valid state tokens among returned log-probabilities")]
    Coverage,

    #[error("{failed} of {total} cells failed")]
    CellFailures { failed: usize, total: usize },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
