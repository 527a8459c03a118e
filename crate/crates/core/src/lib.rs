//! Simulation and exact model reduction for continuously monitored quantum
//! systems: stochastic master equation integration, Lie-rank estimation of
//! confining manifolds, and closed-form reduced filters.

pub mod cli;
pub mod error;
pub mod fields;
pub mod gauss;
pub mod lierank;
pub mod multi;
pub mod ops;
pub mod qnd;
pub mod sme;

pub use error::{Error, Result};
