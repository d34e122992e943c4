use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("element {element} is inverted or degenerate (J = {det:e})")]
    ElementInverted { element: usize, det: f64 },

    #[error("deformation gradient has non-positive determinant J = {0:e}")]
    NonPositiveJacobian(f64),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("dataset generation aborted: {exhausted} of {requested} samples exhausted their retries ({detail})")]
    DatasetAborted {
        exhausted: usize,
        requested: usize,
        detail: String,
    },

    #[error("training diverged: non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::ShapeMismatch { expected, got });
    }
    Ok(())
}
