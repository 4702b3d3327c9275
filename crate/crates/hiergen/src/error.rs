//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("non-finite value encountered in layer {layer}")]
    NonFinite { layer: usize },

    #[error("codebook error: {0}")]
    Codebook(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("stage mismatch: expected {expected} checkpoint, got {got}")]
    StageMismatch { expected: String, got: String },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("image format error: {0}")]
    ImageFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
