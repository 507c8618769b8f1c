//! Benchmarking engine for local feature-attribution explainers.
//!
//! Synthetic datasets with known conditional distributions, small regression
//! models, native explainers, and metrics computed from exact or Monte Carlo
//! conditional expectations.

pub mod bridge;
pub mod distributions;
pub mod error;
pub mod explainers;
pub mod harness;
pub mod labelers;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod par;
pub mod rng;
pub mod simulation;
pub mod subset;

pub use error::{Error, Result};
