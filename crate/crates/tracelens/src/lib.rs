//! File formats, a thread-pool executor, reports and the pipeline behind
//! the `tracelens` command-line tool.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod parallel;
pub mod pipeline;
pub mod report;
pub mod svg;

pub use error::{CliError, Result};
