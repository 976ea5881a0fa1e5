//! Crate-wide error type.
//!
//! Variants are grouped by how the CLI maps them to exit codes: usage and
//! configuration problems, data/file problems, and numerical failures.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad CLI usage or an invalid/unknown configuration key.
    #[error("usage: {0}")]
    Usage(String),

    /// Malformed input data (triple files, descriptions, vocab, checkpoints).
    #[error("data: {0}")]
    Data(String),

    /// Shape mismatch in a tensor operation. Names the op and both shapes.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Non-finite values, divergence, or other numerical failure.
    #[error("numerical: {0}")]
    Numerical(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Data(_) | Error::Io(_) => 2,
            Error::Shape { .. } | Error::Numerical(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
