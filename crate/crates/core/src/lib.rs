//! Simulation and learning toolkit for choosing fake-news debunkers on a
//! social network under a budget.

pub mod approximator;
pub mod baselines;
pub mod env;
pub mod error;
pub mod harness;
pub mod memory;
pub mod netgen;
pub mod propagation;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
