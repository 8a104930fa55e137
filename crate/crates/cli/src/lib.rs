//! File formats, configuration and stage drivers behind the `rsae` binary.

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
