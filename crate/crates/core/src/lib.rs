//! Certification and synthesis of first-order optimization algorithms.
//!
//! An optimization algorithm is viewed as a discrete-time LTI system in
//! feedback with the gradient of the objective, a sector-bounded
//! nonlinearity. This crate certifies exponential convergence rates for a
//! whole function class by solving small semidefinite feasibility problems
//! built from dynamic integral quadratic constraints, and synthesizes
//! rate-optimal algorithms / extremum controllers by a convex change of
//! variables, including the case where gradient information travels through
//! communication channels.
//!
//! Module map:
//! - [`sskit`]: state-space algebra (realizations, interconnections, matrix
//!   equation solvers, integrator decomposition).
//! - [`multiplier`]: sector transform, multiplier filters and their
//!   admissibility constraints.
//! - [`analysis`]: rate certification for a fixed algorithm.
//! - [`synthesis`]: convex controller synthesis and the optimal-rate
//!   procedure.
//! - [`sdp`]: affine LMI modeling and the conic solver front-end.
//! - [`sim`]: closed-loop simulation and empirical rate estimation.

pub mod analysis;
pub mod error;
pub mod multiplier;
pub mod sdp;
pub mod sim;
pub mod sskit;
pub mod synthesis;

pub use error::{Error, Result};
