//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

/// Errors reported by validation, parsing, and estimation routines.
///
/// Numerical operations themselves are total on finite inputs; errors come
/// from structural problems caught at API boundaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Invalid hyperparameter or inconsistent configuration.
    Config(String),
    /// Dimension mismatch between inputs, parameters, and the network spec.
    Shape(String),
    /// Operation requires a smooth activation or loss and got a
    /// discontinuous one (backprop on threshold, gradient of 0-1 loss).
    Unsupported(String),
    /// Metric requested over an empty sample slice.
    EmptyEvaluation,
    /// Malformed IDX container; the message names the offending field.
    Parse(String),
    /// Dataset construction failure (insufficient images, count mismatch).
    Data(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Unsupported(msg) => write!(f, "unsupported operation: {msg}"),
            Error::EmptyEvaluation => write!(f, "metric undefined on an empty sample set"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
