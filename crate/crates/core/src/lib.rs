//! Two-level monotonic multistage recommender.

pub mod baselines;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod persist;
pub mod pipeline;
pub mod rng;
pub mod simgen;
pub mod solver;
pub mod trainer;

pub use error::{Error, Result};
