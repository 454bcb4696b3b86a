//! Solver library for finite-horizon convex stochastic dynamic programs with
//! continuous multivariate states and actions.
//!
//! The solver builds piecewise-linear lower envelopes of the cost-to-go
//! functions out of supporting hyperplanes, placing them adaptively: each
//! state-space simplex ("section") carries a certified bound on the gap
//! between the convexity-implied upper bound and the envelope, and sections
//! are split at their worst point until every bound is within tolerance.
//! Stage subproblems are exact linear programs; subgradients come from the
//! dual multipliers of a dummy-state equality constraint.
//!
//! Module map:
//! - [`model`] — problem data (dynamics, costs, constraints, domains) and
//!   structural validation.
//! - [`lp`] — self-contained dense LP solver with equality/inequality duals.
//! - [`envelope`] — hyperplane envelopes and their on-disk format.
//! - [`stage_solver`] — the dummy-state Bellman LP at a point: value,
//!   subgradient, optimal action.
//! - [`partition`] — per-section error certification and recursive splitting.
//! - [`driver`] — backward sweep over stages, error accounting, policy
//!   simulation, importance-guided refinement.
//! - [`oracle`] — brute-force grid DP for ground-truth comparisons.
//! - [`cli`] — command-line front end.

pub mod cli;
pub mod driver;
pub mod envelope;
pub mod error;
pub mod lp;
mod math;
pub mod model;
pub mod oracle;
pub mod partition;
pub mod stage_solver;

#[cfg(test)]
pub(crate) mod fixtures;

pub use envelope::{Envelope, Hyperplane};
pub use error::{Error, Result};
pub use lp::{LpProblem, LpSolution, LpStatus};
pub use model::{Horizon, StageModel, ValidationReport};
