use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "covariance factorization failed at site {site} (most correlated prior site {other}) \
         after diagonal jitter up to {max_jitter:e}"
    )]
    FactorizationFailed {
        site: usize,
        other: usize,
        max_jitter: f64,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("feature layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    TrainingDiverged { epoch: usize, detail: String },

    #[error("serialization: {0}")]
    Serialization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
