//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by loaders, model builders and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("parse error at line {line}, field {field}: {msg}")]
    Parse {
        line: usize,
        field: usize,
        msg: String,
    },

    #[error("label column is not binary: found {found} distinct values")]
    NotBinary { found: usize },

    #[error("missing value at line {line}, field {field}")]
    MissingValue { line: usize, field: usize },

    #[error("dataset contains a single class only")]
    SingleClass,

    #[error("sparse index {index} exceeds declared width {bound}")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("instance size {n} exceeds guard {max_n}; raise the guard explicitly to proceed")]
    GuardExceeded { n: usize, max_n: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
