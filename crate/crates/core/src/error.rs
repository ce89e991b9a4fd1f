use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("value outside the loss domain: {0}")]
    Domain(String),

    #[error("p_t = {p_t} sits exactly on the recalibration threshold; request a side")]
    AtBreakpoint { p_t: f64 },

    #[error("length mismatch: {predictions} predictions vs {assignments} assignments")]
    LengthMismatch { predictions: usize, assignments: usize },

    #[error("prediction for anchor {prediction} is aligned with assignment for anchor {assignment}")]
    Misaligned { prediction: usize, assignment: usize },

    #[error("invalid box ({x1}, {y1}, {x2}, {y2})")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("image {0} has no annotations")]
    EmptyImage(String),

    #[error("malformed record: {0}")]
    Malformed(String),

    #[error("category vocabulary mismatch: {0}")]
    Vocabulary(String),

    #[error("no ground truth in evaluation set")]
    NoGroundTruth,

    #[error("could not place {wanted} objects in scene {scene} after {attempts} attempts")]
    Placement { scene: usize, wanted: usize, attempts: usize },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
