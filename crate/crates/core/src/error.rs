use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("corrupt stream at byte offset {offset}: {reason}")]
    CorruptStream { offset: usize, reason: String },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid synthetic clip spec: {0}")]
    InvalidSpec(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("encode failed ({backend}): {diagnostic}")]
    Encode { backend: String, diagnostic: String },

    #[error("decode failed: {0}")]
    Decode(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn corrupt(offset: usize, reason: impl Into<String>) -> Self {
        Error::CorruptStream {
            offset,
            reason: reason.into(),
        }
    }

    /// Stable machine-readable code, printed by the CLI on failure.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "E_INVALID_INPUT",
            Error::CorruptStream { .. } => "E_CORRUPT_STREAM",
            Error::InvalidWeights(_) => "E_INVALID_WEIGHTS",
            Error::InvalidSpec(_) => "E_INVALID_SPEC",
            Error::Precondition(_) => "E_PRECONDITION",
            Error::Encode { .. } => "E_ENCODE",
            Error::Decode(_) => "E_DECODE",
            Error::Io(_) => "E_IO",
        }
    }
}
