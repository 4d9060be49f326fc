//! Experiment pipeline: configuration, the unit graph, content-hash stamps
//! and the stage implementations behind the `anbn` command.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod plan;
pub mod stages;
pub mod store;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use pipeline::{run_pipeline, run_stages, Outcome};
