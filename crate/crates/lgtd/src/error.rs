//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or image dimensions do not satisfy an operation's contract.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A configuration value (or combination of values) is invalid.
    /// `field` names the offending switch.
    #[error("invalid config: {field}: {detail}")]
    Config { field: String, detail: String },

    /// Non-finite values where finite ones are required.
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    /// A dataset scene failed validation.
    #[error("scene '{scene}' rejected: {detail}")]
    Scene { scene: String, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn config(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            detail: detail.into(),
        }
    }
}
