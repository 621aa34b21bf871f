//! Config parsing, presets and the sweep runner behind the `fedmeter` binary.

pub mod config;
pub mod presets;
pub mod runner;

pub use config::{ConfigError, ExperimentConfig};
