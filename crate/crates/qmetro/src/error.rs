use crate::prelude::*;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
    #[error("logarithmic derivative does not exist: {0}")]
    NonExistence(String),
    #[error("infeasible problem: {0}")]
    Infeasible(String),
    #[error("no convergence: {0}")]
    Convergence(String),
    #[error("degenerate posterior: {0}")]
    Degenerate(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("unknown model template `{0}`")]
    UnknownTemplate(String),
    #[error("target not reached; best value {best}")]
    NotFound { best: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
