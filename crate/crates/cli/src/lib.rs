//! Batch front end for the `vcsde` engine: CSV ingestion, JSON run
//! configs, fit artifacts and plot-ready tables.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod output;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
