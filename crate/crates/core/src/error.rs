//! Error type shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("config invariant violated: {0}")]
    ConfigInvalid(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is singular or not positive definite: {0}")]
    Singular(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("sensing threshold unreachable for UE {ue}")]
    Infeasible { ue: usize },
    #[error("damped step search exceeded cap (residual stagnated)")]
    StepSearchStalled,
    #[error("infeasible starting point for constrained solve")]
    InfeasibleStart,
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
