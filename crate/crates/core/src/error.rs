use thiserror::Error;

use crate::dual::DualSolution;

/// Errors raised by the estimator and its front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported case: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Invalid(String),

    #[error("setup error: {0}")]
    Setup(String),

    #[error(
        "dual solver did not converge in {iterations} iterations \
         (projected gradient norm {projected_gradient:.3e})"
    )]
    DualNotConverged {
        iterations: usize,
        projected_gradient: f64,
        best: Box<DualSolution>,
    },

    #[error(
        "primal oracle did not converge: max constraint violation {violation:.3e} \
         after {iterations} Newton iterations (penalty weight {mu:.1e})"
    )]
    OracleNotConverged {
        violation: f64,
        iterations: usize,
        mu: f64,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no change-point candidate could be evaluated")]
    AllCandidatesFailed,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors produced by a numerical solve rather than bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::DualNotConverged { .. }
                | Error::OracleNotConverged { .. }
                | Error::AllCandidatesFailed
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
