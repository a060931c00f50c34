use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),

    #[error("no gradient for trainable parameter `{0}`")]
    MissingGradient(String),

    #[error("non-finite loss while probing coordinate {index} of `{name}`")]
    NonFiniteProbe { name: String, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("malformed archive: {0}")]
    Format(String),

    #[error("unsupported archive version {0}")]
    Version(u32),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
