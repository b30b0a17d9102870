//! Error type shared by every module in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or image dimensions do not line up for the requested operation.
    #[error("{op}: shape mismatch, {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A parameter or flag value is outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("png error: {0}")]
    Png(String),

    /// Checkpoint container errors. Each variant of the format problem gets
    /// its own message so callers can report bad magic, bad version and bad
    /// CRC distinctly.
    #[error("checkpoint format error: {0}")]
    Format(String),

    /// A forward pass or loss produced NaN/Inf; `tensor` names the first
    /// offending buffer found.
    #[error("non-finite value in tensor '{tensor}'")]
    NonFinite { tensor: String },

    /// `adam_step` was called on a parameter whose gradient was never
    /// populated by `backward`.
    #[error("parameter '{param}' has no gradient")]
    MissingGrad { param: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
