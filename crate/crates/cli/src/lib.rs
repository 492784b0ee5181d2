//! Experiment runner for `pulab`: config parsing, method dispatch and
//! output files.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{load_config, parse_config, ExperimentConfig, LoadedConfig, Method};
pub use runner::{Experiment, OUT_DIR_ENV};
