use thiserror::Error;

use crate::policy::Policy;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("closed loop is not stable: spectral radius {radius:.6} >= 1")]
    Unstable { radius: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("{what} is not {required}")]
    Definiteness {
        what: &'static str,
        required: &'static str,
    },

    #[error("rollout diverged at step {step}: state norm {norm:.3e}")]
    Divergence { step: usize, norm: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An iterative solver stopped early; `last` is the last valid iterate.
    #[error("stopped at iteration {iteration} (mu = {mu}): {cause}")]
    Stopped {
        iteration: usize,
        mu: f64,
        last: Box<Policy>,
        cause: Box<Error>,
    },
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Strips any `Stopped` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stopped { cause, .. } => cause.root(),
            other => other,
        }
    }
}
