use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),

    #[error("gradient check invalid: {0}")]
    InvalidGradientCheck(String),

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("empty token list")]
    EmptyTokens,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
