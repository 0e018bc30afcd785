//! Experiment harness: configuration, model registry, parallel ensembles,
//! the five experiment kinds, rate fits, reports and snapshot files.

pub mod config;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod parallel;
pub mod registry;
pub mod report;
pub mod snapshot;

pub use config::{ExperimentConfig, ExperimentId};
pub use error::{HarnessError, Result};
pub use experiments::{run, ExperimentResult};
