//! `TLIM` influence-matrix container and its long-form CSV export.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracelens_core::influence::{InfluenceMatrix, Variant};

use super::binary::{put_f32s, Reader};
use super::{csv_err, csv_reader, csv_writer};
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"TLIM";
pub const VERSION: u32 = 1;
const HAS_PER_EPOCH: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixIndex {
    pub test_ids: Vec<String>,
    pub train_ids: Vec<String>,
    pub epochs: Vec<usize>,
    pub variant: Variant,
    pub checkpoint_fingerprint: String,
    pub config_hash: String,
}

/// Scores are stored as f32.
pub fn encode_matrix(m: &InfluenceMatrix, config_hash: &str) -> Vec<u8> {
    let cells = m.totals.len();
    let extra = m.per_epoch.as_ref().map_or(0, |p| p.len());
    let mut out = Vec::with_capacity(40 + 4 * (cells + extra));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.n_test() as u64).to_le_bytes());
    out.extend_from_slice(&(m.n_train() as u64).to_le_bytes());
    out.extend_from_slice(&(m.epochs.len() as u32).to_le_bytes());
    let flags = if m.per_epoch.is_some() { HAS_PER_EPOCH } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    put_f32s(&mut out, &m.totals);
    if let Some(pe) = &m.per_epoch {
        put_f32s(&mut out, pe);
    }
    let index = MatrixIndex {
        test_ids: m.test_ids.clone(),
        train_ids: m.train_ids.clone(),
        epochs: m.epochs.clone(),
        variant: m.variant,
        checkpoint_fingerprint: m.checkpoint_fingerprint.clone(),
        config_hash: config_hash.into(),
    };
    let json = serde_json::to_vec(&index).expect("index serializes");
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out
}

pub fn decode_matrix(path: &Path, bytes: &[u8]) -> Result<(InfluenceMatrix, MatrixIndex)> {
    let mut r = Reader::new(path, bytes);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(CliError::format(path, format!("unsupported matrix version {version}")));
    }
    let nt = r.usize()?;
    let nz = r.usize()?;
    let ne = r.u32()? as usize;
    let flags = r.u32()?;
    let cells = nt
        .checked_mul(nz)
        .ok_or_else(|| CliError::format(path, "matrix dimensions overflow"))?;
    let totals = r.f32s(cells)?;
    let per_epoch = if flags & HAS_PER_EPOCH != 0 {
        Some(r.f32s(cells.saturating_mul(ne))?)
    } else {
        None
    };
    let len = r.usize()?;
    let index: MatrixIndex = serde_json::from_slice(r.take(len)?)
        .map_err(|e| CliError::format(path, format!("matrix index: {e}")))?;
    r.finish()?;
    if index.test_ids.len() != nt || index.train_ids.len() != nz || index.epochs.len() != ne {
        return Err(CliError::format(path, "index does not match header dimensions"));
    }
    let m = InfluenceMatrix::new(
        index.test_ids.clone(),
        index.train_ids.clone(),
        totals,
        per_epoch,
        index.epochs.clone(),
        index.variant,
        index.checkpoint_fingerprint.clone(),
    )
    .map_err(|e| CliError::format(path, e.to_string()))?;
    Ok((m, index))
}

pub fn write_matrix(path: &Path, m: &InfluenceMatrix, config_hash: &str) -> Result<()> {
    fs::write(path, encode_matrix(m, config_hash)).map_err(|e| CliError::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<(InfluenceMatrix, MatrixIndex)> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_matrix(path, &bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub test_id: String,
    pub train_id: String,
    pub total: f64,
}

pub fn write_matrix_csv(path: &Path, m: &InfluenceMatrix, config_hash: &str) -> Result<()> {
    let mut w = csv_writer(path, config_hash)?;
    for (t, test_id) in m.test_ids.iter().enumerate() {
        for (z, train_id) in m.train_ids.iter().enumerate() {
            w.serialize(MatrixRow {
                test_id: test_id.clone(),
                train_id: train_id.clone(),
                total: m.get(t, z),
            })
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<Vec<MatrixRow>> {
    let mut r = csv_reader(path)?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}
