//! Simulation and inference for a two-type branching model of tumor
//! recurrence under therapy.
//!
//! Sensitive cells follow a subcritical linear birth-death process and seed
//! resistant clones at a power-law mutation rate. Resistant cells grow at a
//! density-dependent rate bounded by a carrying capacity. The crate provides
//!
//! - [`ssa`]: exact event-driven simulation with per-clone bookkeeping,
//! - [`ode`]: the deterministic limit with recurrence-time localization,
//! - [`inference`]: estimators for the growth, mutation and initial-size
//!   exponents from observables at recurrence,
//! - [`experiments`]: seeded Monte Carlo studies with CSV/JSON output,
//! - [`cli`]: the `recursim` command-line front end.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod inference;
pub mod model;
pub mod ode;
pub mod seeds;
pub mod ssa;

pub use error::{DomainError, Error, Result};
pub use model::{ModelParams, RateFamily, RateFunction, ValidationReport};
