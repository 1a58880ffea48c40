//! Experiment runner: config files, per-seed outputs, aggregation across
//! seeds, accuracy curves and the self-check command.

pub mod aggregate;
pub mod check;
pub mod config;
pub mod curves;
pub mod error;
pub mod output;
pub mod run;

pub use aggregate::{Aggregate, AggregateRow, Stat};
pub use config::{Cell, ExperimentConfig, Overrides, Scenario, DATA_DIR_ENV};
pub use error::{HarnessError, Result};
pub use run::{run, CellOutcome, CellPaths, RunOptions, RunReport};
