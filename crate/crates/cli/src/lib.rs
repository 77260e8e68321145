//! Experiment runner for the `gvfl` simulator: TOML configuration, seeded
//! scenarios, parameter sweeps and result aggregation.

pub mod config;
pub mod error;
pub mod report;
pub mod scenario;
pub mod sweep;

pub use config::{ExperimentConfig, DATA_DIR_ENV};
pub use error::{CliError, Result};
pub use scenario::{run_and_write, run_scenario, ScenarioOutput, SeedResult};
pub use sweep::{run_sweep, SweepAxis};
