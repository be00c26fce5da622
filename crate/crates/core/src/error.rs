use thiserror::Error;

/// Errors produced by the potentials, projections and solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A point lies outside the open domain of a potential.
    #[error("point outside potential domain: {0}")]
    Domain(String),

    /// An iterative inner solve did not reach its tolerance.
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { what: &'static str, iterations: usize, residual: f64 },

    /// A malformed argument (singular matrix, degenerate basis, invalid parameter).
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
