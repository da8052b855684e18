use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{confidence, AdamW, Mode, ModelParams};
use crate::dataset::{fingerprint_ids, Dataset};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub mode: Mode,
    pub learning_rate: f64,
    pub epochs_max: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// When false, every epoch up to `epochs_max` runs and the last one is
    /// taken as converged.
    #[serde(default = "enabled")]
    pub early_stopping: bool,
}

fn enabled() -> bool {
    true
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            mode: Mode::Mlp,
            learning_rate: 3e-4,
            epochs_max: 10,
            patience: 3,
            batch_size: 32,
            hidden_dim: 64,
            weight_decay: 0.01,
            seed: 0,
            early_stopping: true,
        }
    }
}

impl Hyperparams {
    pub fn linear() -> Self {
        Hyperparams {
            mode: Mode::Linear,
            learning_rate: 1e-2,
            hidden_dim: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs_max < 1 {
            return Err(Error::Config("epochs_max must be >= 1".into()));
        }
        if self.mode == Mode::Mlp && self.hidden_dim < 1 {
            return Err(Error::Config("hidden_dim must be >= 1 in mlp mode".into()));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: ModelParams,
    /// Accuracy on the held-out split.
    pub dev_metric: f64,
    /// Mean training loss over the epoch's batches.
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSeries {
    pub checkpoints: Vec<Checkpoint>,
    pub converged_epoch: usize,
    pub train_config: Hyperparams,
    pub dataset_fingerprint: String,
}

impl CheckpointSeries {
    pub fn new(
        checkpoints: Vec<Checkpoint>,
        converged_epoch: usize,
        train_config: Hyperparams,
        dataset_fingerprint: String,
    ) -> Result<Self> {
        if checkpoints.is_empty() {
            return Err(Error::InvalidOperation("checkpoint series is empty".into()));
        }
        for (i, c) in checkpoints.iter().enumerate() {
            if c.epoch != i + 1 {
                return Err(Error::Integrity(format!(
                    "checkpoint epochs must run 1..E consecutively; position {} holds epoch {}",
                    i, c.epoch
                )));
            }
        }
        if converged_epoch < 1 || converged_epoch > checkpoints.len() {
            return Err(Error::Integrity(format!(
                "converged epoch {converged_epoch} outside 1..={}",
                checkpoints.len()
            )));
        }
        Ok(CheckpointSeries {
            checkpoints,
            converged_epoch,
            train_config,
            dataset_fingerprint,
        })
    }

    pub fn converged(&self) -> &Checkpoint {
        &self.checkpoints[self.converged_epoch - 1]
    }

    pub fn last_epoch(&self) -> usize {
        self.checkpoints.len()
    }

    /// Content hash over every checkpoint's parameter bits and the metadata.
    pub fn fingerprint(&self) -> String {
        let mut h = crate::dataset::Fnv1a::new(0);
        h.write(self.dataset_fingerprint.as_bytes());
        h.write(&(self.converged_epoch as u64).to_le_bytes());
        for c in &self.checkpoints {
            h.write(&(c.epoch as u64).to_le_bytes());
            h.write(&c.dev_metric.to_bits().to_le_bytes());
            for v in c.params.values() {
                h.write(&v.to_bits().to_le_bytes());
            }
        }
        format!("{:016x}", h.finish())
    }
}

/// Trains on the whole dataset. See [`train_masked`].
pub fn train(dataset: &Dataset, dev: &Dataset, hyper: &Hyperparams) -> Result<CheckpointSeries> {
    train_masked(dataset, dev, hyper, &vec![false; dataset.len()])
}

/// Trains with AdamW on mini-batches, snapshotting after every epoch and
/// stopping once dev accuracy has not improved for `patience` epochs.
///
/// `excluded[i]` drops sample `i`. The shuffle is always drawn over the full
/// index range and excluded slots are skipped inside their batch, so every
/// other sample sees the same batch schedule as in the unmasked run.
///
/// Snapshots are stored at `f32` precision so that a persisted checkpoint
/// reproduces the in-memory one exactly.
pub fn train_masked(
    dataset: &Dataset,
    dev: &Dataset,
    hyper: &Hyperparams,
    excluded: &[bool],
) -> Result<CheckpointSeries> {
    hyper.validate()?;
    if excluded.len() != dataset.len() {
        return Err(Error::Shape {
            expected: dataset.len(),
            got: excluded.len(),
        });
    }
    let kept = excluded.iter().filter(|e| !**e).count();
    if kept == 0 {
        return Err(Error::InvalidOperation("no training samples left".into()));
    }
    if dev.dims() != dataset.dims() {
        return Err(Error::Shape {
            expected: dataset.dims(),
            got: dev.dims(),
        }
        .context("dev set"));
    }
    let dims = dataset.dims();
    let mut params = ModelParams::init(hyper.mode, dims, hyper.hidden_dim, hyper.seed);
    let mut opt = AdamW::new(params.len(), hyper.learning_rate, hyper.weight_decay);
    let mut shuffle_rng = rng::derive(hyper.seed, 0x5348_5546);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut grad = vec![0.0; params.len()];
    let mut hidden = vec![0.0; params.hidden_dim()];
    let samples = dataset.samples();

    let mut checkpoints = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize);
    let mut stale = 0;
    for epoch in 1..=hyper.epochs_max {
        order.sort_unstable();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut n_seen = 0usize;
        for (b, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let batch: Vec<usize> = chunk.iter().copied().filter(|&i| !excluded[i]).collect();
            if batch.is_empty() {
                continue;
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in &batch {
                let s = &samples[i];
                batch_loss += params.accumulate_grad(&s.features, s.label, scale, &mut hidden, &mut grad);
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, batch: b });
            }
            opt.step(params.values_mut(), &grad);
            if params.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { epoch, batch: b });
            }
            loss_sum += batch_loss;
            n_seen += batch.len();
        }
        let snapshot = params.to_f32_precision();
        let dev_metric = accuracy(&snapshot, dev)?;
        checkpoints.push(Checkpoint {
            epoch,
            params: snapshot,
            dev_metric,
            train_loss: loss_sum / n_seen as f64,
        });
        if !hyper.early_stopping {
            best = (dev_metric, epoch);
        } else if dev_metric > best.0 {
            best = (dev_metric, epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= hyper.patience {
                break;
            }
        }
    }
    let fingerprint = fingerprint_ids(
        samples
            .iter()
            .zip(excluded)
            .filter(|(_, e)| !**e)
            .map(|(s, _)| s.id.as_str()),
    );
    CheckpointSeries::new(checkpoints, best.1, hyper.clone(), fingerprint)
}

/// Fraction of samples whose true class gets probability > 0.5.
pub fn accuracy(params: &ModelParams, data: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    for s in data.samples() {
        if confidence(params, s)? > 0.5 {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
