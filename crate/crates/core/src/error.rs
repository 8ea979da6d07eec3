use thiserror::Error;

/// Errors raised by the weigher model, the moment routines and the optimizer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MwmError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid setpoints: {0}")]
    InvalidSetpoints(String),

    #[error("combinations {i} and {j} are perfectly correlated with equal means")]
    Degenerate { i: usize, j: usize },

    #[error("matrix is not positive semidefinite (smallest pivot {pivot:e})")]
    NotPositiveSemidefinite { pivot: f64 },

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no feasible starting point found after {attempts} draws; try a larger f or a smaller epsilon")]
    NoFeasibleStart { attempts: usize },

    #[error("no start converged to a point satisfying all constraints")]
    Infeasible,
}

pub type Result<T> = std::result::Result<T, MwmError>;
