//! Crate-wide error type.

use std::fmt;
use std::io;

/// Errors produced by the matcher, trainer and I/O layers.
#[derive(Debug)]
pub enum Error {
    /// An operation was called with incompatible shapes or values.
    InvalidArgument(String),
    /// A structural invariant (coefficient symmetry, mask layout) was violated.
    InvariantViolation(String),
    /// An input is too degenerate to process (e.g. a box below 1px).
    DegenerateInput(String),
    /// The computed result is unusable (e.g. a box with non-positive area).
    DegenerateOutput(String),
    /// A configuration file failed to parse; `line` is 1-based.
    ConfigParse { line: usize, message: String },
    /// A binary file (weights, PPM, manifest) is malformed.
    Format(String),
    /// The keyframe oracle failed on a keyframe.
    Oracle(String),
    Io(io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::InvariantViolation(msg) => write!(f, "invariant violation: {msg}"),
            Error::DegenerateInput(msg) => write!(f, "degenerate input: {msg}"),
            Error::DegenerateOutput(msg) => write!(f, "degenerate output: {msg}"),
            Error::ConfigParse { line, message } => {
                write!(f, "config parse error at line {line}: {message}")
            }
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Oracle(msg) => write!(f, "keyframe oracle error: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(err: io::Error) -> Self {
        Error::Io(err)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
