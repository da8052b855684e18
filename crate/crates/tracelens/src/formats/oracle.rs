//! Long-form oracle comparison table.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{csv_err, csv_reader, csv_writer};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub train_id: String,
    pub test_id: String,
    /// `loo`, `hessian`, `tracin_cos` or `tracin_dot`.
    pub method: String,
    /// Loss delta for `loo`, score otherwise.
    pub value: f64,
    /// JSON object with method-specific details.
    pub metadata: String,
}

pub fn write_oracle_csv(path: &Path, rows: &[OracleRow], config_hash: &str) -> Result<()> {
    let mut w = csv_writer(path, config_hash)?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_oracle_csv(path: &Path) -> Result<Vec<OracleRow>> {
    let mut r = csv_reader(path)?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}
