use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    /// Malformed binary container; `offset` is the byte position where
    /// parsing failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A weight or row violates the tensor invariants.
    #[error("validation error at layer {layer}, head {head}, query {query}: {message}")]
    Validation {
        layer: usize,
        head: usize,
        query: usize,
        message: String,
    },

    #[error("alignment error at frame {frame}: {message}")]
    Alignment { frame: usize, message: String },

    #[error("index error: {0}")]
    Index(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid synth spec: {0}")]
    Spec(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}
