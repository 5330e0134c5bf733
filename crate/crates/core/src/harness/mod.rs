//! Experiment harness: configuration, scenarios, simulation runs and
//! aggregated output.

pub mod config;
pub mod metrics;
pub mod output;
pub mod runner;
pub mod scenario;
pub mod sim;

pub use config::{ConfigError, SimConfig};
pub use metrics::{compute_metrics, RunMetrics};
pub use scenario::{MapSpec, Scenario, ScenarioSpec, LTE_IF, WIFI_IF};
pub use runner::{run_experiment, run_grid, sweep_specs, CellResult};
pub use sim::{run_once, Capture, RunOutput, SimError};
