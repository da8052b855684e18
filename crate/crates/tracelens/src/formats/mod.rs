//! On-disk formats for datasets, checkpoints, influence matrices and
//! oracle tables.

mod binary;
pub mod checkpoint;
pub mod dataset;
pub mod matrix;
pub mod oracle;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Starts a CSV file whose first line records the config hash as a comment.
pub fn csv_writer(path: &Path, config_hash: &str) -> Result<csv::Writer<fs::File>> {
    use std::io::Write;
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    writeln!(f, "# config_hash={config_hash}").map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

pub fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(path.to_path_buf()));
    }
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(f))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    CliError::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}
