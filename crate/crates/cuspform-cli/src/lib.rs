//! Config-driven experiment runner for the `cuspform` pipeline.

pub mod config;
pub mod emit;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use pipeline::{run, Bundle, Check};
