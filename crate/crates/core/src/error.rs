use thiserror::Error;

/// Errors produced by the simulator, the networks and the training pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("scene overflow: could not place object {placed} of {requested} after {retries} retries")]
    SceneOverflow {
        placed: usize,
        requested: usize,
        retries: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty bin")]
    EmptyBin,
    #[error("window must be odd (got {0})")]
    EvenWindow(usize),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("no selectable pixel: mask is empty")]
    AllMasked,
    #[error("diverged: {0}")]
    Diverged(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("worker failure: {0}")]
    Worker(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl ToString, got: impl ToString) -> Error {
    Error::ShapeMismatch {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
