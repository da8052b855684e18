//! Pipeline stages behind the subcommands. Each stage reads its inputs from
//! the run directory, verifies them against the manifest, writes its
//! artifacts and records them.

mod analyze;
mod validate;

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracelens_core::analysis::select_test_samples;
use tracelens_core::dataset::{generate_synthetic, split, Dataset};
use tracelens_core::influence::{influence_matrix, topk_all, InfluenceMatrix, Sign, TopKSet};
use tracelens_core::model::{train as train_model, CheckpointSeries};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::formats::checkpoint::{read_series, write_series, SERIES_INDEX};
use crate::formats::dataset::{read_dataset, write_dataset, TextFeatures};
use crate::formats::matrix::{read_matrix, write_matrix, write_matrix_csv};
use crate::manifest::Manifest;
use crate::parallel::Pool;
use crate::report::{read_report, write_report};

pub use analyze::analyze;
pub use validate::validate;

/// Artifact locations relative to the run directory.
pub mod paths {
    pub const CONFIG: &str = "config.toml";
    pub const TRAIN: &str = "data/train.jsonl";
    pub const DEV: &str = "data/dev.jsonl";
    pub const POOL: &str = "data/pool.jsonl";
    pub const CHECKPOINTS: &str = "checkpoints";
    pub const TESTS: &str = "influence/tests.jsonl";
    pub const MATRIX: &str = "influence/matrix.tlim";
    pub const MATRIX_CSV: &str = "influence/matrix.csv";
    pub const TOPK_POSITIVE: &str = "topk/positive.json";
    pub const TOPK_NEGATIVE: &str = "topk/negative.json";
    pub const ORACLE_CSV: &str = "validate/oracle.csv";
    pub const ORACLE_SUMMARY: &str = "validate/oracle_summary.json";
    pub const REMOVAL: &str = "validate/removal.json";
    pub const REMOVAL_CSV: &str = "validate/removal.csv";
    pub const GROUP_SHARES: &str = "analyze/group_shares.json";
    pub const GROUP_SHARES_CSV: &str = "analyze/group_shares.csv";
    pub const INFLUENCE_TABLE: &str = "analyze/influence_table.json";
    pub const INFLUENCE_TABLE_CSV: &str = "analyze/influence_table.csv";
    pub const REINFORCING: &str = "analyze/reinforcing.json";
    pub const REINFORCING_CSV: &str = "analyze/reinforcing.csv";
    pub const DYNAMICS: &str = "analyze/dynamics.json";
    pub const DYNAMICS_CSV: &str = "analyze/dynamics.csv";
    pub const ZERO_SHOT: &str = "analyze/zero_shot.json";
    pub const ZERO_SHOT_CSV: &str = "analyze/zero_shot.csv";
    pub const IMBALANCE: &str = "analyze/imbalance.json";
    pub const IMBALANCE_CSV: &str = "analyze/imbalance.csv";
    pub const FIGURES: &str = "figures";
}

/// State shared by the stages of one invocation.
pub struct Run {
    pub config: RunConfig,
    pub root: PathBuf,
    pub hash: String,
    pub pool: Pool,
    pub manifest: Manifest,
    command: String,
}

impl Run {
    pub fn new(config: RunConfig, root: &Path, threads: usize) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let manifest = Manifest::load_or_default(root)?;
        let pool = Pool::new(threads).map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
        Ok(Run {
            hash: config.hash(),
            config,
            root: root.to_path_buf(),
            pool,
            manifest,
            command: String::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Path for an output, creating its directory.
    fn output(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        Ok(p)
    }

    fn begin(&mut self, command: &str) -> Result<()> {
        info!("{command}: config {} in {}", &self.hash[..12], self.root.display());
        self.command = command.into();
        Ok(())
    }

    fn record(&mut self, path: &Path, inputs: &[String]) -> Result<()> {
        self.manifest.record(&self.root, path, &self.command, &self.hash, inputs)
    }

    /// Writes the effective config next to the artifacts and saves the
    /// manifest. Nothing in the run directory is touched by a failed stage
    /// before this point except its own outputs.
    fn finish(&mut self) -> Result<()> {
        let p = self.path(paths::CONFIG);
        let text = format!("# config_hash = \"{}\"\n{}", self.hash, self.config.to_run_toml());
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        self.record(&p, &[])?;
        self.manifest.save(&self.root)
    }

    fn input(&mut self, rel: &str) -> Result<(PathBuf, String)> {
        let p = self.path(rel);
        let key = self.manifest.verify_input(&self.root, &p, &self.hash)?;
        Ok((p, key))
    }

    fn text_features(&self) -> TextFeatures {
        TextFeatures {
            dims: self.config.data.dims,
            seed: self.config.data.feature_seed,
        }
    }

    fn load_dataset(&mut self, rel: &str) -> Result<(Dataset, String)> {
        let (p, key) = self.input(rel)?;
        Ok((read_dataset(&p, self.text_features())?, key))
    }

    /// Loads the checkpoints and checks they were trained on `train`.
    fn load_series(&mut self, train: &Dataset) -> Result<(CheckpointSeries, Vec<String>)> {
        let dir = self.path(paths::CHECKPOINTS);
        let (_, index_key) = self.input(&format!("{}/{SERIES_INDEX}", paths::CHECKPOINTS))?;
        let (series, index) = read_series(&dir)?;
        let mut keys = vec![index_key];
        for f in &index.files {
            keys.push(self.input(&format!("{}/{f}", paths::CHECKPOINTS))?.1);
            let side = f.replace(".tlck", ".json");
            keys.push(self.input(&format!("{}/{side}", paths::CHECKPOINTS))?.1);
        }
        let found = train.fingerprint();
        if series.dataset_fingerprint != found {
            return Err(CliError::Fingerprint {
                what: format!("dataset_fingerprint ({} vs {})", paths::CHECKPOINTS, paths::TRAIN),
                expected: series.dataset_fingerprint,
                found,
            });
        }
        Ok((series, keys))
    }

    /// Loads the matrix and checks it was computed from `series`.
    fn load_matrix(&mut self, series: &CheckpointSeries, train: &Dataset) -> Result<(InfluenceMatrix, String)> {
        let (p, key) = self.input(paths::MATRIX)?;
        let (m, _) = read_matrix(&p)?;
        let found = series.fingerprint();
        if m.checkpoint_fingerprint != found {
            return Err(CliError::Fingerprint {
                what: format!("checkpoint_fingerprint ({} vs {})", paths::MATRIX, paths::CHECKPOINTS),
                expected: m.checkpoint_fingerprint,
                found,
            });
        }
        let ids: Vec<&str> = train.samples().iter().map(|s| s.id.as_str()).collect();
        if m.train_ids.iter().map(String::as_str).ne(ids.iter().copied()) {
            return Err(CliError::Fingerprint {
                what: format!("train ids ({} vs {})", paths::MATRIX, paths::TRAIN),
                expected: tracelens_core::dataset::fingerprint_ids(m.train_ids.iter().map(String::as_str)),
                found: train.fingerprint(),
            });
        }
        Ok((m, key))
    }

    fn write_figure(&mut self, name: &str, svg: &str, inputs: &[String]) -> Result<()> {
        let p = self.output(&format!("{}/{name}", paths::FIGURES))?;
        fs::write(&p, svg).map_err(|e| CliError::io(&p, e))?;
        self.record(&p, inputs)
    }
}

pub fn gen_data(run: &mut Run) -> Result<Value> {
    run.begin("gen-data")?;
    let c = &run.config;
    let sizes = [c.data.train_per_group, c.data.dev_per_group, c.data.pool_per_group];
    let (corpus, inputs) = match c.data.source.clone() {
        Some(src) => {
            let key = run.manifest.verify_input(&run.root, &src, &run.hash)?;
            (read_dataset(&src, run.text_features())?, vec![key])
        }
        None => (generate_synthetic(&c.synth_config())?, vec![paths::CONFIG.to_string()]),
    };
    let parts = split(&corpus, &sizes)?;
    let mut counts = Vec::new();
    for (rel, part) in [paths::TRAIN, paths::DEV, paths::POOL].iter().zip(&parts) {
        let p = run.output(rel)?;
        write_dataset(&p, part)?;
        run.record(&p, &inputs)?;
        counts.push(part.len());
        info!("wrote {rel}: {} samples, {} groups", part.len(), part.groups().len());
    }
    run.finish()?;
    Ok(json!({
        "train": counts[0],
        "dev": counts[1],
        "pool": counts[2],
        "parallel": parts[0].is_parallel(),
        "fingerprint": parts[0].fingerprint(),
    }))
}

pub fn train(run: &mut Run) -> Result<Value> {
    run.begin("train")?;
    let (train_set, k1) = run.load_dataset(paths::TRAIN)?;
    let (dev, k2) = run.load_dataset(paths::DEV)?;
    let hyper = run.config.hyperparams();
    let series = train_model(&train_set, &dev, &hyper)?;
    for c in &series.checkpoints {
        info!("epoch {}: train loss {:.4}, dev accuracy {:.4}", c.epoch, c.train_loss, c.dev_metric);
    }
    let written = write_series(&run.path(paths::CHECKPOINTS), &series, &run.hash)?;
    for p in &written {
        run.record(p, &[k1.clone(), k2.clone()])?;
    }
    run.finish()?;
    Ok(json!({
        "epochs": series.last_epoch(),
        "converged_epoch": series.converged_epoch,
        "dev_accuracy": series.converged().dev_metric,
        "checkpoint_fingerprint": series.fingerprint(),
    }))
}

pub fn influence(run: &mut Run) -> Result<Value> {
    run.begin("influence")?;
    let (train_set, k_train) = run.load_dataset(paths::TRAIN)?;
    let (pool_set, k_pool) = run.load_dataset(paths::POOL)?;
    let (series, k_series) = run.load_series(&train_set)?;
    let c = run.config.clone();
    let tests = select_test_samples(&series.converged().params, &pool_set, c.influence.tests_per_group, c.seed)?;
    let tests = Dataset::new(tests)?;
    let p = run.output(paths::TESTS)?;
    write_dataset(&p, &tests)?;
    let mut inputs = k_series.clone();
    inputs.push(k_pool);
    run.record(&p, &inputs)?;

    info!("scoring {} tests against {} training samples", tests.len(), train_set.len());
    let matrix = influence_matrix(&run.pool, &series, &train_set, &tests, c.influence.variant, &c.tracin_options())?
        .to_f32_precision();
    let mut inputs = k_series;
    inputs.push(k_train);
    inputs.push(paths::TESTS.to_string());
    let p = run.output(paths::MATRIX)?;
    write_matrix(&p, &matrix, &run.hash)?;
    run.record(&p, &inputs)?;
    if run.config.influence.export_csv {
        let p = run.output(paths::MATRIX_CSV)?;
        write_matrix_csv(&p, &matrix, &run.hash)?;
        run.record(&p, &[paths::MATRIX.to_string()])?;
    }
    run.finish()?;
    Ok(json!({
        "tests": tests.len(),
        "train": train_set.len(),
        "epochs": matrix.epochs,
        "variant": matrix.variant,
        "checkpoint_fingerprint": matrix.checkpoint_fingerprint,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKReport {
    pub k: usize,
    pub sign: Sign,
    pub sets: Vec<TopKSet>,
}

pub fn topk(run: &mut Run) -> Result<Value> {
    run.begin("topk")?;
    let (train_set, _) = run.load_dataset(paths::TRAIN)?;
    let (series, _) = run.load_series(&train_set)?;
    let (matrix, key) = run.load_matrix(&series, &train_set)?;
    let k = run.config.influence.k;
    for (sign, rel) in [(Sign::Positive, paths::TOPK_POSITIVE), (Sign::Negative, paths::TOPK_NEGATIVE)] {
        let report = TopKReport {
            k,
            sign,
            sets: topk_all(&matrix, k, sign)?,
        };
        let p = run.output(rel)?;
        write_report(&p, "topk", &run.hash, &report)?;
        run.record(&p, std::slice::from_ref(&key))?;
    }
    run.finish()?;
    Ok(json!({ "k": k, "tests": matrix.n_test() }))
}

pub fn read_topk(path: &Path) -> Result<TopKReport> {
    Ok(read_report::<TopKReport>(path)?.report)
}

/// Every stage in order on one manifest.
pub fn reproduce(run: &mut Run) -> Result<Value> {
    let mut out = serde_json::Map::new();
    out.insert("gen_data".into(), gen_data(run)?);
    out.insert("train".into(), train(run)?);
    out.insert("influence".into(), influence(run)?);
    out.insert("topk".into(), topk(run)?);
    out.insert("validate".into(), validate(run)?);
    out.insert("analyze".into(), analyze(run)?);
    run.manifest.check_complete()?;
    out.insert("config_hash".into(), json!(run.hash));
    out.insert("artifacts".into(), json!(run.manifest.artifacts.len()));
    Ok(Value::Object(out))
}
