//! Command-line pipeline: configuration, staged execution with resumable
//! artifacts, and report assembly.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod stages;

pub use config::RunConfig;
pub use error::CliError;
pub use pipeline::{run_pipeline, Outcome, Stage};
