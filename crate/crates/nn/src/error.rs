use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("model dim {model_dim} cannot be split across {heads} heads")]
    BadHeadCount { model_dim: usize, heads: usize },

    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("checkpoint does not match model: {0}")]
    CheckpointMismatch(String),

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),

    #[error("metadata: {0}")]
    Json(#[from] serde_json::Error),
}
