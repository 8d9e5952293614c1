//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Dimension mismatch; names both sides so the caller can see which
    /// tensor was wrong.
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// A NaN or infinity reached a place that must stay finite. Carries
    /// enough context to locate the offending batch row.
    NumericHealth(String),
    /// Bad experiment configuration (unknown key, unparsable value, ...).
    Config(String),
    /// Sampling from a buffer with no stored transitions.
    EmptyBuffer,
    /// An argument outside its documented range.
    InvalidArg(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape {
                what,
                expected,
                got,
            } => write!(f, "shape mismatch for {what}: expected {expected}, got {got}"),
            Error::NumericHealth(msg) => write!(f, "numeric health violation: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::EmptyBuffer => write!(f, "replay buffer is empty"),
            Error::InvalidArg(msg) => write!(f, "invalid argument: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
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

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
