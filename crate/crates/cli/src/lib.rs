//! File formats, experiment configuration and the benchmark harness around
//! `twomirror-core`.

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod files;
pub mod numfmt;

pub use error::{CliError, CliResult};
