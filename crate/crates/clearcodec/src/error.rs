//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    /// Tensor/layer shape disagreement; both shapes are spelled out.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Non-finite value where a finite one is required (inputs, loss, grads).
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Tape misuse (backward on a consumed tape, non-scalar loss, ...).
    #[error("autodiff: {0}")]
    Autodiff(String),

    /// Malformed bitstream, checkpoint or config file.
    #[error("format error: {0}")]
    Format(String),

    /// Stream or checkpoint was produced by a different model.
    #[error("model hash mismatch: stream has {stream:#010x}, checkpoint has {model:#010x}")]
    HashMismatch { stream: u32, model: u32 },

    /// Entropy decoding failed (truncated or corrupted payload).
    #[error("decode error: {0}")]
    Decode(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CodecError>;

impl CodecError {
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        CodecError::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
