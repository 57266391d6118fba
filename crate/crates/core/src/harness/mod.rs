//! Scenario configuration, the closed-loop driver, metrics, comparisons,
//! zone sweeps and file output.

pub mod config;
pub mod metrics;
pub mod output;
pub mod sim;
pub mod sweep;

use thiserror::Error;

pub use config::{load_scenario, parse_scenario, ControllerKind, ScenarioConfig};
pub use metrics::{compare, compute_metrics, ComparisonTable, MetricsRecord};
pub use sim::{run_simulation, LogRow, Outcome, SimResult};
pub use sweep::{sweep_zone_validation, SweepReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("step {step}: {message}")]
    Runtime { step: usize, message: String },
    #[error("comparison needs at least two controllers, got {0}")]
    TooFewControllers(usize),
    #[error("run ended without an event")]
    NoEvent,
}

impl HarnessError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Parse(_) | HarnessError::Validation(_) | HarnessError::TooFewControllers(_) => 2,
            _ => 3,
        }
    }
}
