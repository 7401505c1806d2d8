//! Learning-to-rank recommenders for cold-start users and items.

pub mod baselines;
pub mod boosting;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod metrics;
pub mod rng;
pub mod similarity;
pub mod tree;

pub use error::{Error, Result};
