use std::io;

use thiserror::Error;

/// Errors produced anywhere in the upsampling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A count, index or factor outside its admissible range.
    #[error("range error: {0}")]
    Range(String),
    /// Input that has no meaningful answer, e.g. normalizing a single repeated point.
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// Tensor shapes that do not fit together.
    #[error("shape error: {0}")]
    Shape(String),
    /// A caller-side precondition that was violated.
    #[error("contract error: {0}")]
    Contract(String),
    /// Malformed text input.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    /// Invalid configuration key or value.
    #[error("config error: {0}")]
    Config(String),
    /// Checkpoint bytes that do not follow the expected layout.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn range_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Range(msg.into()))
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
