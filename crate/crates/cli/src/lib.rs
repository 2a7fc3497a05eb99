//! Pipeline orchestration, on-disk artefact layout and reports for the
//! `gs4d` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod store;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
