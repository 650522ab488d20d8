//! bdmlab: a numerical laboratory for branching birth-death-mutation
//! processes and the state-constrained Hamilton-Jacobi value functions that
//! govern their population-size exponents.
//!
//! The crate implements both sides of that correspondence and lets them
//! confront each other at desk scale:
//!
//! - an exact individual-based simulator with full ancestry, so the number of
//!   individuals near a trait, or whose whole lineage stays inside a tube
//!   around a reference path, can be counted and turned into base-K exponents
//!   ([`sim`]);
//! - a weighted single-particle (spine) Monte-Carlo estimator of the same
//!   counts in expectation ([`spine`]);
//! - the mutation Hamiltonian `H`, its Legendre transform `L`, and the
//!   action/cost functionals of trait paths ([`kernel`], [`action`]);
//! - a semi-Lagrangian dynamic-programming solver for the constrained value
//!   `u_a` (running cost never drops below `a`) and its unconstrained limit
//!   ([`solver`]);
//! - a CLI that orchestrates simulate / estimate / solve / compare runs into
//!   reproducible CSV and JSON reports ([`cli`], [`config`], [`report`]).
//!
//! The math core ([`kernel`], [`path`], [`action`], [`solver`], [`scenario`])
//! is generic over the scalar type through [`scalar::Real`]; the aliases
//! below pin the `f64` instantiations used by the simulator and the CLI.

// Validation code throughout the crate writes `!(x > 0.0)` on purpose: the
// negation rejects NaN along with the out-of-range values, which `x <= 0.0`
// would silently accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod extended;
pub mod kernel;
pub mod path;
pub mod quad;
pub mod scalar;
pub mod scenario;
pub mod seed;
pub mod sim;
pub mod solver;

pub use extended::Extended;
pub use scalar::Real;

/// Default scalar for simulation, estimation, and reporting.
pub type Scalar = f64;

/// `f64` mutation kernel used by the simulator and CLI.
pub type MutationKernel = kernel::MutationKernel<Scalar>;

/// `f64` scenario used by the simulator and CLI.
pub type Scenario = scenario::Scenario<Scalar>;

/// `f64` trait path.
pub type GridPath = path::GridPath<Scalar>;

/// `f64` extended value.
pub type Ext = Extended<Scalar>;

/// `f64` solved value field.
pub type ValueField = solver::ValueField<Scalar>;

/// `f64` solver grid.
pub type SolverGrid = solver::SolverGrid<Scalar>;
