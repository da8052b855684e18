//! Checkpoint containers: one `TLCK` binary per epoch with a JSON sidecar,
//! plus a series index.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracelens_core::model::{Checkpoint, CheckpointSeries, Hyperparams, Mode, ModelParams};

use super::binary::{put_f32s, Reader};
use super::{read_json, write_json};
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"TLCK";
pub const VERSION: u32 = 1;
pub const SERIES_INDEX: &str = "series.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub epoch: usize,
    pub dev_metric: f64,
    pub train_loss: f64,
    pub hyperparams: Hyperparams,
    pub dataset_fingerprint: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesIndex {
    pub format_version: u32,
    pub converged_epoch: usize,
    pub epochs: Vec<usize>,
    pub files: Vec<String>,
    pub dataset_fingerprint: String,
    pub checkpoint_fingerprint: String,
    pub hyperparams: Hyperparams,
    pub config_hash: String,
}

pub fn encode_params(params: &ModelParams, epoch: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 4 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.mode().code() as u32).to_le_bytes());
    out.extend_from_slice(&(params.input_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(params.hidden_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(epoch as u32).to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    put_f32s(&mut out, params.values());
    out
}

/// Returns the parameters and the epoch recorded in the header.
pub fn decode_params(path: &Path, bytes: &[u8]) -> Result<(ModelParams, usize)> {
    let mut r = Reader::new(path, bytes);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(CliError::format(path, format!("unsupported checkpoint version {version}")));
    }
    let code = r.u32()?;
    let mode = u8::try_from(code)
        .ok()
        .and_then(Mode::from_code)
        .ok_or_else(|| CliError::format(path, format!("unknown model mode {code}")))?;
    let input_dim = r.u32()? as usize;
    let hidden_dim = r.u32()? as usize;
    let epoch = r.u32()? as usize;
    let n = r.usize()?;
    let values = r.f32s(n)?;
    r.finish()?;
    let params = ModelParams::from_values(mode, input_dim, hidden_dim, values)
        .map_err(|e| CliError::format(path, e.to_string()))?;
    Ok((params, epoch))
}

fn epoch_file(epoch: usize) -> String {
    format!("epoch_{epoch:03}.tlck")
}

fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes every checkpoint and the series index; returns the written paths.
pub fn write_series(dir: &Path, series: &CheckpointSeries, config_hash: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut written = Vec::new();
    let mut files = Vec::new();
    for c in &series.checkpoints {
        let name = epoch_file(c.epoch);
        let bin = dir.join(&name);
        fs::write(&bin, encode_params(&c.params, c.epoch)).map_err(|e| CliError::io(&bin, e))?;
        let side = Sidecar {
            format_version: VERSION,
            epoch: c.epoch,
            dev_metric: c.dev_metric,
            train_loss: c.train_loss,
            hyperparams: series.train_config.clone(),
            dataset_fingerprint: series.dataset_fingerprint.clone(),
            config_hash: config_hash.into(),
        };
        let sp = sidecar_path(&bin);
        write_json(&sp, &side)?;
        written.push(bin);
        written.push(sp);
        files.push(name);
    }
    let index = SeriesIndex {
        format_version: VERSION,
        converged_epoch: series.converged_epoch,
        epochs: series.checkpoints.iter().map(|c| c.epoch).collect(),
        files,
        dataset_fingerprint: series.dataset_fingerprint.clone(),
        checkpoint_fingerprint: series.fingerprint(),
        hyperparams: series.train_config.clone(),
        config_hash: config_hash.into(),
    };
    let ip = dir.join(SERIES_INDEX);
    write_json(&ip, &index)?;
    written.push(ip);
    Ok(written)
}

/// Loads a series and checks every stored fingerprint against the content.
pub fn read_series(dir: &Path) -> Result<(CheckpointSeries, SeriesIndex)> {
    let ip = dir.join(SERIES_INDEX);
    if !ip.exists() {
        return Err(CliError::MissingArtifact(ip));
    }
    let index: SeriesIndex = read_json(&ip)?;
    let mut checkpoints = Vec::with_capacity(index.files.len());
    for (name, &epoch) in index.files.iter().zip(&index.epochs) {
        let bin = dir.join(name);
        let bytes = fs::read(&bin).map_err(|e| CliError::io(&bin, e))?;
        let (params, header_epoch) = decode_params(&bin, &bytes)?;
        if header_epoch != epoch {
            return Err(CliError::format(&bin, format!("header holds epoch {header_epoch}, index says {epoch}")));
        }
        let side: Sidecar = read_json(&sidecar_path(&bin))?;
        if side.dataset_fingerprint != index.dataset_fingerprint {
            return Err(CliError::Fingerprint {
                what: format!("dataset_fingerprint of {}", sidecar_path(&bin).display()),
                expected: index.dataset_fingerprint.clone(),
                found: side.dataset_fingerprint,
            });
        }
        checkpoints.push(Checkpoint {
            epoch,
            params,
            dev_metric: side.dev_metric,
            train_loss: side.train_loss,
        });
    }
    let series = CheckpointSeries::new(
        checkpoints,
        index.converged_epoch,
        index.hyperparams.clone(),
        index.dataset_fingerprint.clone(),
    )
    .map_err(|e| CliError::format(&ip, e.to_string()))?;
    let found = series.fingerprint();
    if found != index.checkpoint_fingerprint {
        return Err(CliError::Fingerprint {
            what: format!("checkpoint_fingerprint of {}", dir.display()),
            expected: index.checkpoint_fingerprint.clone(),
            found,
        });
    }
    Ok((series, index))
}
