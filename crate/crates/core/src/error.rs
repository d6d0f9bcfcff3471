//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AvError {
    #[error("shape mismatch in {context}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        context: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("data: {0}")]
    Data(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training aborted at iteration {iteration} (batch {batch_ids:?}): {reason}")]
    TrainingAborted {
        iteration: usize,
        batch_ids: Vec<String>,
        reason: String,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AvError>;

impl AvError {
    pub(crate) fn shape(context: impl Into<String>, lhs: &[usize], rhs: &[usize]) -> Self {
        AvError::ShapeMismatch {
            context: context.into(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        AvError::InvalidArgument(msg.into())
    }
}
