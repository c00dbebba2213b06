use crate::expr::{DomainError, ParseError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{context}: {source}")]
    Parse {
        context: String,
        #[source]
        source: ParseError,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("evaluation failed at {point:?}: {source}")]
    Domain {
        point: Vec<f64>,
        #[source]
        source: DomainError,
    },
    #[error("unknown catalog entry `{name}`; valid names: {}", valid.join(", "))]
    UnknownCatalog { name: String, valid: Vec<String> },
    #[error("control {0:?} lies outside the closed unit ball")]
    ControlOutOfBall(Vec<f64>),
    #[error("gradient of the target vanishes at {0:?}; the analysis point is invalid")]
    ZeroGradient(Vec<f64>),
    #[error("matrix is not symmetric (defect {defect:e})")]
    NotSymmetric { defect: f64 },
    #[error("Jacobi iteration did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("internal consistency check failed: {0}")]
    Internal(String),
    #[error("trajectory left the finite range at t = {time}")]
    BlowUp { time: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
