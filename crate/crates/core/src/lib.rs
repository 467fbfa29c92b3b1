//! Statistical-physics inference toolkit for two planted models: the
//! Rademacher spiked Wigner matrix and the sparse two-community stochastic
//! block model.
//!
//! The crate provides belief propagation on sparse graphs (with population
//! dynamics for the tree recursion and Kesten–Stigum stability), approximate
//! message passing with its scalar state evolution, the replica-symmetric
//! free energy with its phase classification, and a brute-force enumeration
//! oracle used to cross-check all of the above on tiny systems.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` is the intended NaN-rejecting form

pub mod amp;
pub mod bp;
mod error;
pub mod exact;
pub mod models;
pub mod numerics;
pub mod replica;
pub mod state_evolution;

pub use error::{Error, Result};
pub use numerics::SeedSpec;
