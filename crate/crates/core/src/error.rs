use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("category `{0}`: data file not found at {1}")]
    MissingCategory(String, PathBuf),
    #[error("category `{0}` has no usable sketches")]
    EmptyCategory(String),
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("class `{class}` has {available} samples, {requested} requested")]
    InsufficientSamples {
        class: String,
        available: usize,
        requested: usize,
    },
    #[error("invalid input at `{path}`: {reason}")]
    Invalid { path: String, reason: String },
    #[error("model config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
