//! Experiment harness, file formats and command-line support around
//! `lossforge-core`.

pub mod clock;
pub mod config;
pub mod data;
pub mod error;
pub mod formats;
pub mod harness;
pub mod report;

pub use config::ScenarioConfig;
pub use error::{HarnessError, Result};
pub use harness::{random_search_baseline, run_scenario};
pub use report::{emit_report, RunReport};
