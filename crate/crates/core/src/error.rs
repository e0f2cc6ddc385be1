use thiserror::Error;

/// Errors surfaced by the solvers and oracles in this crate.
#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point outside oracle domain: {0}")]
    DomainViolation(String),

    #[error("non-finite value encountered in {context} at iteration {iteration}")]
    NumericalFailure { context: String, iteration: usize },

    #[error("{context}: iteration cap of {cap} exceeded")]
    NonConvergence { context: String, cap: usize },

    #[error("operation not supported: {0}")]
    Capability(String),

    #[error("lower-level value oracle failed: {0}")]
    OracleFailure(String),
}

pub type Result<T> = std::result::Result<T, SolverError>;
