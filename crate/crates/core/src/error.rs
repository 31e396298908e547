//! Error type shared by all modules.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Caller passed something structurally invalid (bad index, dimension
    /// mismatch, out-of-range parameter).
    Input(String),
    /// A dataset file could not be parsed.
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    /// The request is valid but outside what this implementation supports.
    Capability(String),
    /// A numeric quantity became non-finite; the payload names the offender.
    Numeric(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Input(msg) => write!(f, "invalid input: {msg}"),
            Error::Parse { file, line, msg } => {
                write!(f, "parse error in {file}:{line}: {msg}")
            }
            Error::Capability(msg) => write!(f, "unsupported: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
