//! Portfolio construction under Gaussian-mixture returns.
//!
//! * [`model`]: the return distribution and its closed-form CDF, MGF and CGF.
//! * [`egm`]: maximize expected exponential utility (minimize `K(w, -γ)`),
//!   plus the Markowitz baseline and the high/low risk-aversion limits.
//! * [`evar`]: minimize entropic value at risk through its perspective form.
//! * [`graphform`]: cone representations of the EVaR objective and the
//!   calculus used to build them, packaged for external conic solvers.
//! * [`oracle`]: brute-force and Monte Carlo reference computations used by
//!   the test suites.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod egm;
pub mod em;
pub mod error;
pub mod evar;
pub mod feasible;
pub mod graphform;
pub mod io;
pub mod linalg;
pub mod lse;
pub mod model;
pub mod oracle;
pub mod solver;

pub use egm::{markowitz_solve, EgmProblem, LimitMode, SolveOptions, SolveReport};
pub use error::{GmError, Result};
pub use evar::{EvarMethod, EvarOptions, EvarProblem, EvarReport};
pub use feasible::FeasibleSet;
pub use model::{ComponentProjection, GmModel, RawModel};
