//! Shape-constrained robust smoothing splines.
//!
//! The `m`-th derivative of the fit is constrained to alternate in sign
//! across a set of change points. For `ell = m` the estimator is computed
//! from a finite-dimensional dual; a discretized primal solver serves as an
//! independent check and handles `ell < m`.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod changepoint;
pub mod cli;
pub mod cone;
pub mod dual;
pub mod error;
pub mod halfwidth;
pub mod loss;
pub mod oracle;
pub mod problem;
pub mod quadrature;
pub mod recovery;
pub mod rkhs;

pub use changepoint::{profile_objective, search, SearchResult, SearchSpec};
pub use cone::{ChangePointConfig, Orientation};
pub use dual::{DualOptions, DualProblem, DualSolution};
pub use error::{Error, Result};
pub use halfwidth::{influence_probe, HalfwidthReport, InfluenceProbe};
pub use loss::LossSpec;
pub use oracle::{solve_primal, DiscretePrimal, OracleOptions, OracleSolution};
pub use problem::{Observations, ProblemSpec};
pub use quadrature::{CellFunction, QuadratureGrid};
pub use recovery::{kkt_report, recover, KktReport, SplineEstimate};
pub use rkhs::SobolevParams;
