//! File formats, run configuration and the `segse` command line.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod pgm;
pub mod report;
pub mod tensorfile;

pub use error::{CliError, CliResult, ExitKind, FormatError};
