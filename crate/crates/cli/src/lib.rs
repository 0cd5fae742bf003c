//! Command-line pipelines over the `flowbundle` library: configuration,
//! stage orchestration, artifact writing and plotting.

pub mod artifacts;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod svg;
pub mod tables;

pub use config::PipelineConfig;
pub use error::{CliError, Result};
