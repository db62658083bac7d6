//! Experiment driver for the intersection agents: training, evaluation, rendering,
//! learning-curve comparison and the priority study.

pub mod artifacts;
pub mod cli;
pub mod compare;
pub mod config;
pub mod error;
pub mod priority;
pub mod render;
pub mod svg;
pub mod train;

pub use config::{ConfigError, ExperimentConfig};
pub use error::CliError;
