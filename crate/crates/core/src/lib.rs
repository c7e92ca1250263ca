//! Power-grid dynamics as stiff nonlinear differential-algebraic equations,
//! moving-horizon initial-state estimation from PMU data, and exact
//! observability-based PMU placement.
//!
//! The pipeline runs in this order:
//!
//! 1. [`netmodel`] ingests a case, solves the AC power flow and back-solves a
//!    steady state.
//! 2. [`integrator`] advances the model with BE, BDF(k) or trapezoidal steps.
//! 3. [`mhe`] reconstructs the initial state from a window of measurements.
//! 4. [`observability`] builds the Gramian and its per-bus contributions.
//! 5. [`placement`] picks the trace-optimal sensor set.
//!
//! State vectors use the flat layout described in [`dynamics::StateLayout`].

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod exact;
pub mod integrator;
pub mod mhe;
pub mod netmodel;
pub mod observability;
pub mod placement;

pub use error::{Error, Result};
