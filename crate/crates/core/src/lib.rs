//! Variance–Gamma approximation on the second Wiener chaos.
//!
//! The crate provides special functions, the Variance–Gamma law, exact
//! spectral cumulant and Gamma-operator calculus for second-chaos random
//! variables, a numerical Stein-equation solver, explicit Malliavin–Stein
//! bounds with Monte Carlo distance estimates, and a spectral model of the
//! generalized Rosenblatt random variable.

pub mod bounds;
pub mod chaos;
pub mod cli;
pub mod error;
pub mod qmc;
pub mod quadrature;
pub mod rng;
pub mod rosenblatt;
pub mod special;
pub mod stein;
pub mod vg;

pub use error::{Error, Result};

/// Library version embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
