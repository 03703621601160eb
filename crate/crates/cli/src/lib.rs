//! Scenario loading, experiment orchestration, report files and the
//! acceptance suite behind the `rbsde` binary.

pub mod acceptance;
pub mod config;
pub mod error;
pub mod experiment;
pub mod report;
pub mod scenario;

pub use acceptance::{run_acceptance, run_criterion, CriterionResult, Summary};
pub use config::{Overrides, RunConfig};
pub use error::{CliError, Result};
pub use experiment::run_experiment;
pub use report::{Report, RunStatus};
pub use scenario::{load_scenario, parse_scenario};
