use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected length {expected}, got {got}")]
    Length { expected: usize, got: usize },

    #[error("need at least {needed} bases for tau = {tau}, got {got}")]
    InsufficientLength {
        needed: usize,
        got: usize,
        tau: usize,
    },

    #[error("{0}")]
    Domain(String),

    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },

    /// No segmentation exists, e.g. fewer samples than states.
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate signal: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// True when the failure is a feasibility problem rather than malformed input.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible(_))
    }
}
