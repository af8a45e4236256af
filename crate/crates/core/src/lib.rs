//! Synthetic commuter origin–destination tables at building and minute
//! resolution, calibrated to travel-time marginals, plus pickup–delivery
//! routing benchmarks built from the result.

pub mod calibrate;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod geo;
pub mod ingest;
pub mod marginals;
pub mod network;
pub mod pipeline;
pub mod rng;
pub mod synthesize;
pub mod validate;
pub mod vrpbench;

pub use error::{Error, Result};
