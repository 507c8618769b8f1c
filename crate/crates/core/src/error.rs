use thiserror::Error;

/// Errors raised across the benchmark engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("conditioning failed: {0}")]
    Conditioning(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("degenerate labeler: {0}")]
    DegenerateLabeler(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("explainer refused: {0}")]
    Refused(String),

    #[error("retraining failed at k={k}: {source}")]
    Retrain { k: usize, source: Box<Error> },

    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("bridge: {0}")]
    Bridge(String),

    #[error("bridge timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
