//! Error type shared by every module.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure categories. Each maps to one CLI exit code.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Bad argument, bad configuration or malformed input (exit 2).
    #[error("config: {0}")]
    Config(String),
    /// Malformed input file; `line` is 1-based and counts the header.
    #[error("parse: line {line}: {msg}")]
    Parse { line: usize, msg: String },
    /// A data invariant does not hold (exit 3).
    #[error("invariant `{name}` violated: {detail}")]
    Invariant { name: &'static str, detail: String },
    /// Degenerate data for the requested estimator (exit 3).
    #[error("degenerate data: {0}")]
    Degenerate(String),
    /// Numerical failure (exit 4).
    #[error("numerical: {0}")]
    Numerical(String),
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Io(_) => 2,
            Error::Invariant { .. } | Error::Degenerate(_) => 3,
            Error::Numerical(_) => 4,
        }
    }

    pub(crate) fn invariant(name: &'static str, detail: impl Into<String>) -> Self {
        Error::Invariant { name, detail: detail.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
