use thiserror::Error;

/// Errors produced by the estimation library.
///
/// Variants map onto the failure classes callers need to distinguish:
/// bad arguments, bad data, solver non-convergence, and numerical trouble.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    /// Caller supplied an invalid argument or configuration value.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Input data violates a contract (unbalanced panel, nonpositive value
    /// under log transform, empty band, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("solver did not converge after {iterations} iterations (last delta {delta:.3e})")]
    NonConvergence { iterations: usize, delta: f64 },

    /// A numerical invariant failed (non-finite likelihood, infeasible
    /// covariance, all-(-inf) density row, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
