//! Spectral-Galerkin simulation of semilinear stochastic heat equations on
//! `(0,1)^d` with Q-Wiener noise, together with Monte Carlo estimators for
//! moments, gamma-radonifying norms and space-time Hölder regularity.

pub mod error;
pub mod harness;
pub mod noise;
pub mod operators;
pub mod regularity;
pub mod rng;
pub mod solver;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
