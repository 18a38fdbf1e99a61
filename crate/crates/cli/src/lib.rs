//! Experiment runner for the gtbp tracker: Monte Carlo batches scored with
//! OSPA(2), and runtime scaling sweeps.

pub mod bench;
pub mod config;
pub mod error;
pub mod run;

pub use config::{ExperimentConfig, Method};
pub use error::{CliError, Result};
