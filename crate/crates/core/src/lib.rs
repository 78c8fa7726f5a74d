//! Continuous-state branching processes with immigration: Laplace-transform
//! engines, discrete approximations, path simulation and Monte Carlo checks.

// `!(x > 0.0)` is used on purpose so that NaN inputs land in the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod cumulant;
pub mod discrete;
pub mod error;
pub mod measures;
pub mod mechanism;
pub mod ode;
pub mod paths;
pub mod quad;
pub mod rngkit;
pub mod suite;
pub mod verify;

pub use error::{Error, Result};
