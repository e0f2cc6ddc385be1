//! First-order solver library for constrained bilevel optimization.
//!
//! The driver solves a sequence of penalized minimax subproblems built from
//! a modified augmented Lagrangian of the lower-level problem, with
//! accelerated proximal-gradient subsolvers, an optimal method for
//! strongly-convex-strongly-concave saddles, and an independent KKT
//! residual verifier.

pub mod adaptive;
pub mod apg;
pub mod error;
pub mod kkt;
pub mod minimax;
pub mod model;
pub mod smo;

pub use error::{Result, SolverError};
