//! JSON and CSV report files. Every JSON report is wrapped in an envelope
//! that names the report kind and carries the config hash.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::formats::{csv_err, csv_writer, read_json, write_json};
use crate::manifest::TOOL_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub kind: String,
    pub tool_version: String,
    pub config_hash: String,
    pub report: T,
}

pub fn write_report<T: Serialize>(path: &Path, kind: &str, config_hash: &str, report: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Borrowed<'a, T> {
        kind: &'a str,
        tool_version: &'a str,
        config_hash: &'a str,
        report: &'a T,
    }
    write_json(
        path,
        &Borrowed {
            kind,
            tool_version: TOOL_VERSION,
            config_hash,
            report,
        },
    )
}

pub fn read_report<T: DeserializeOwned>(path: &Path) -> Result<Envelope<T>> {
    read_json(path)
}

pub fn write_rows<T: Serialize>(path: &Path, config_hash: &str, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path, config_hash)?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
