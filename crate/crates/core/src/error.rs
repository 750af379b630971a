use thiserror::Error;

/// Errors raised by the estimators, samplers and I/O helpers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("solver failed: {0}")]
    SolverFailure(String),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate rank: singular value {index} is zero")]
    DegenerateRank { index: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("solver diverged: {0}")]
    Divergence(String),

    #[error("cross-validation failed: {0}")]
    CvFailure(String),

    #[error("enumeration budget exceeded: {required} candidates > budget {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("sampler failed: {0}")]
    SamplerFailure(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
