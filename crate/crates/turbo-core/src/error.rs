//! Error type shared by every runtime module.

use std::fmt;
use std::io;

/// Failure modes of the runtime.
///
/// Each variant carries a human-readable context string assembled at the
/// failure site; callers that need to branch on the failure class match on
/// the variant.
#[derive(Debug)]
pub enum Error {
    /// Operand dimensions are incompatible (matrix products, residual adds,
    /// trace/sequence alignment).
    Shape(String),
    /// An argument value is outside the operation's domain (non-positive
    /// softmax bias, token size < 1, too few tokens).
    Domain(String),
    /// A merge map does not describe the sequence it is being applied to.
    Consistency(String),
    /// A model or run configuration violates its invariants.
    Config(String),
    /// A NaN or infinity appeared where finite values are required.
    NonFinite(String),
    /// Underlying I/O failure while reading or writing artifacts.
    Io(io::Error),
    /// A file does not conform to its on-disk format.
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(c) => write!(f, "shape mismatch: {c}"),
            Error::Domain(c) => write!(f, "domain error: {c}"),
            Error::Consistency(c) => write!(f, "consistency error: {c}"),
            Error::Config(c) => write!(f, "config error: {c}"),
            Error::NonFinite(c) => write!(f, "non-finite value: {c}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Format(c) => write!(f, "format error: {c}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}
