use std::io;

use thiserror::Error;

/// Errors produced anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("malformed file {path}: {message}")]
    Format { path: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("collective protocol error: {0}")]
    Protocol(String),

    #[error("worker {rank} failed: {message}")]
    Join { rank: usize, message: String },

    #[error(
        "line search failed: no step satisfied sufficient decrease \
         (f0={f0:e}, D={directional:e}, last alpha={last_alpha:e}, last f={last_value:e})"
    )]
    LineSearch {
        f0: f64,
        directional: f64,
        last_alpha: f64,
        last_value: f64,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("reference solver did not converge: {0}")]
    Oracle(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of the numerical method itself, as opposed to bad
    /// input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::LineSearch { .. } | Error::Oracle(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
