//! TracIn influence: per-checkpoint gradient products summed over epochs.
//!
//! For a train sample `z` and test sample `t` the per-epoch term is
//! `∇L(t, θ_e) · ∇L(z, θ_e)` (dot variant) or the cosine of the two
//! gradients (cosine variant); the score is the sum of terms over the
//! scored checkpoints. No learning-rate weighting is applied unless
//! [`TracInOptions::lr_weighted`] is set.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::model::{grad_at, CheckpointSeries, GradScope, GradientVector};
use crate::vecmath;

/// Gradients with a smaller norm make the cosine term 0.
pub const ZERO_GRAD_NORM: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Dot,
    Cosine,
}

impl Variant {
    pub fn code(self) -> u8 {
        match self {
            Variant::Dot => 0,
            Variant::Cosine => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Variant::Dot),
            1 => Some(Variant::Cosine),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochRange {
    /// Epochs 1..=converged_epoch.
    #[default]
    Converged,
    /// Every stored checkpoint.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracInOptions {
    pub epochs: EpochRange,
    /// Multiply each term by the training learning rate.
    pub lr_weighted: bool,
    pub scope: GradScope,
    /// Keep the per-epoch tensor in matrices.
    pub keep_per_epoch: bool,
}

impl Default for TracInOptions {
    fn default() -> Self {
        TracInOptions {
            epochs: EpochRange::Converged,
            lr_weighted: false,
            scope: GradScope::Full,
            keep_per_epoch: true,
        }
    }
}

impl TracInOptions {
    fn epoch_count(&self, series: &CheckpointSeries) -> usize {
        match self.epochs {
            EpochRange::Converged => series.converged_epoch,
            EpochRange::All => series.last_epoch(),
        }
    }

    fn weight(&self, series: &CheckpointSeries) -> f64 {
        if self.lr_weighted {
            series.train_config.learning_rate
        } else {
            1.0
        }
    }
}

/// One per-epoch term.
pub fn term(variant: Variant, test: &GradientVector, train: &GradientVector) -> f64 {
    let d = vecmath::dot(&test.values, &train.values);
    match variant {
        Variant::Dot => d,
        Variant::Cosine => {
            if test.norm < ZERO_GRAD_NORM || train.norm < ZERO_GRAD_NORM {
                0.0
            } else {
                // sqrt(a²·b²) rather than |a|·|b| so a vector against itself gives exactly 1
                (d / libm::sqrt(test.sq_norm() * train.sq_norm())).clamp(-1.0, 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRecord {
    pub train_id: String,
    pub test_id: String,
    pub per_epoch: Vec<f64>,
    pub total: f64,
    pub variant: Variant,
}

pub fn tracin_dot(series: &CheckpointSeries, train: &Sample, test: &Sample) -> Result<InfluenceRecord> {
    tracin(series, train, test, Variant::Dot, &TracInOptions::default())
}

pub fn tracin_cos(series: &CheckpointSeries, train: &Sample, test: &Sample) -> Result<InfluenceRecord> {
    tracin(series, train, test, Variant::Cosine, &TracInOptions::default())
}

pub fn tracin(
    series: &CheckpointSeries,
    train: &Sample,
    test: &Sample,
    variant: Variant,
    opts: &TracInOptions,
) -> Result<InfluenceRecord> {
    let w = opts.weight(series);
    let mut per_epoch = Vec::new();
    let mut total = 0.0;
    for c in &series.checkpoints[..opts.epoch_count(series)] {
        let gt = grad_at(&c.params, test, c.epoch, opts.scope)?;
        let gz = grad_at(&c.params, train, c.epoch, opts.scope)?;
        let t = w * term(variant, &gt, &gz);
        per_epoch.push(t);
        total += t;
    }
    Ok(InfluenceRecord {
        train_id: train.id.clone(),
        test_id: test.id.clone(),
        per_epoch,
        total,
        variant,
    })
}

/// Dense test×train score table with optional per-epoch terms.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMatrix {
    pub test_ids: Vec<String>,
    pub train_ids: Vec<String>,
    /// Row-major `[test][train]`.
    pub totals: Vec<f64>,
    /// `[epoch][test][train]`, aligned with `epochs`.
    pub per_epoch: Option<Vec<f64>>,
    pub epochs: Vec<usize>,
    pub variant: Variant,
    pub checkpoint_fingerprint: String,
}

impl InfluenceMatrix {
    pub fn new(
        test_ids: Vec<String>,
        train_ids: Vec<String>,
        totals: Vec<f64>,
        per_epoch: Option<Vec<f64>>,
        epochs: Vec<usize>,
        variant: Variant,
        checkpoint_fingerprint: String,
    ) -> Result<Self> {
        let cells = test_ids.len() * train_ids.len();
        if totals.len() != cells {
            return Err(Error::Shape {
                expected: cells,
                got: totals.len(),
            });
        }
        if let Some(pe) = &per_epoch {
            if pe.len() != cells * epochs.len() {
                return Err(Error::Shape {
                    expected: cells * epochs.len(),
                    got: pe.len(),
                });
            }
        }
        if totals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("influence matrix holds non-finite scores".into()));
        }
        Ok(InfluenceMatrix {
            test_ids,
            train_ids,
            totals,
            per_epoch,
            epochs,
            variant,
            checkpoint_fingerprint,
        })
    }

    pub fn n_test(&self) -> usize {
        self.test_ids.len()
    }

    pub fn n_train(&self) -> usize {
        self.train_ids.len()
    }

    pub fn get(&self, test: usize, train: usize) -> f64 {
        self.totals[test * self.n_train() + train]
    }

    pub fn row(&self, test: usize) -> &[f64] {
        let n = self.n_train();
        &self.totals[test * n..(test + 1) * n]
    }

    pub fn test_index(&self, id: &str) -> Option<usize> {
        self.test_ids.iter().position(|t| t == id)
    }

    /// Rounds every stored score to the nearest `f32`, matching what the
    /// binary matrix format can hold.
    pub fn to_f32_precision(&self) -> InfluenceMatrix {
        let round = |v: &Vec<f64>| v.iter().map(|x| *x as f32 as f64).collect::<Vec<f64>>();
        InfluenceMatrix {
            totals: round(&self.totals),
            per_epoch: self.per_epoch.as_ref().map(round),
            ..self.clone()
        }
    }

    pub fn mean(&self) -> f64 {
        self.totals.iter().sum::<f64>() / self.totals.len() as f64
    }

    fn epoch_block(&self, e: usize) -> Result<&[f64]> {
        let pe = self.per_epoch.as_ref().ok_or(Error::PerEpochUnavailable)?;
        let cells = self.totals.len();
        Ok(&pe[e * cells..(e + 1) * cells])
    }

    /// The slice holding only epoch `self.epochs[e]`'s terms.
    pub fn epoch_slice(&self, e: usize) -> Result<InfluenceMatrix> {
        let block = self.epoch_block(e)?.to_vec();
        self.derived(block, vec![self.epochs[e]])
    }

    /// Cumulative scores over the first `e + 1` scored epochs.
    pub fn prefix_sum(&self, e: usize) -> Result<InfluenceMatrix> {
        let mut acc = vec![0.0; self.totals.len()];
        for i in 0..=e {
            for (a, v) in acc.iter_mut().zip(self.epoch_block(i)?) {
                *a += v;
            }
        }
        self.derived(acc, self.epochs[..=e].to_vec())
    }

    /// One slice per scored epoch; they sum to `totals`.
    pub fn per_epoch_matrix(&self) -> Result<Vec<InfluenceMatrix>> {
        (0..self.epochs.len()).map(|e| self.epoch_slice(e)).collect()
    }

    fn derived(&self, totals: Vec<f64>, epochs: Vec<usize>) -> Result<InfluenceMatrix> {
        InfluenceMatrix::new(
            self.test_ids.clone(),
            self.train_ids.clone(),
            totals,
            None,
            epochs,
            self.variant,
            self.checkpoint_fingerprint.clone(),
        )
    }

    /// Keeps only the listed test rows (in the given order).
    pub fn select_tests(&self, ids: &[String]) -> Result<InfluenceMatrix> {
        let rows: Vec<usize> = ids
            .iter()
            .map(|id| self.test_index(id).ok_or_else(|| Error::Lookup(format!("test id {id}"))))
            .collect::<Result<_>>()?;
        let n = self.n_train();
        let mut totals = Vec::with_capacity(rows.len() * n);
        for &r in &rows {
            totals.extend_from_slice(self.row(r));
        }
        let per_epoch = match &self.per_epoch {
            None => None,
            Some(_) => {
                let mut pe = Vec::with_capacity(rows.len() * n * self.epochs.len());
                for e in 0..self.epochs.len() {
                    let block = self.epoch_block(e)?;
                    for &r in &rows {
                        pe.extend_from_slice(&block[r * n..(r + 1) * n]);
                    }
                }
                Some(pe)
            }
        };
        InfluenceMatrix::new(
            ids.to_vec(),
            self.train_ids.clone(),
            totals,
            per_epoch,
            self.epochs.clone(),
            self.variant,
            self.checkpoint_fingerprint.clone(),
        )
    }
}

fn gradients<E: Executor>(
    exec: &E,
    series: &CheckpointSeries,
    epoch_idx: usize,
    data: &Dataset,
    scope: GradScope,
) -> Result<Vec<GradientVector>> {
    let c = &series.checkpoints[epoch_idx];
    exec.map_indexed(data.len(), |i| {
        let s = &data.samples()[i];
        grad_at(&c.params, s, c.epoch, scope).map_err(|e| e.context(format!("epoch {}, sample {}", c.epoch, s.id)))
    })
    .into_iter()
    .collect()
}

/// Scores every (test, train) pair. Gradients are computed once per
/// (checkpoint, sample) and reused; each cell accumulates its epoch terms
/// in epoch order, so the result does not depend on the executor.
pub fn influence_matrix<E: Executor>(
    exec: &E,
    series: &CheckpointSeries,
    train: &Dataset,
    test: &Dataset,
    variant: Variant,
    opts: &TracInOptions,
) -> Result<InfluenceMatrix> {
    let input_dim = series.checkpoints[0].params.input_dim();
    for (name, d) in [("train", train), ("test", test)] {
        if d.dims() != input_dim {
            return Err(Error::Shape {
                expected: input_dim,
                got: d.dims(),
            }
            .context(format!("{name} set")));
        }
    }
    let n_epochs = opts.epoch_count(series);
    let w = opts.weight(series);
    let (nt, nz) = (test.len(), train.len());
    let mut totals = vec![0.0; nt * nz];
    let mut per_epoch = if opts.keep_per_epoch {
        Some(Vec::with_capacity(n_epochs * nt * nz))
    } else {
        None
    };
    for e in 0..n_epochs {
        let gz = gradients(exec, series, e, train, opts.scope)?;
        let gt = gradients(exec, series, e, test, opts.scope)?;
        let rows: Vec<Vec<f64>> = exec.map_indexed(nt, |t| gz.iter().map(|g| w * term(variant, &gt[t], g)).collect());
        for (t, row) in rows.iter().enumerate() {
            for (acc, v) in totals[t * nz..(t + 1) * nz].iter_mut().zip(row) {
                *acc += v;
            }
        }
        if let Some(pe) = per_epoch.as_mut() {
            for row in rows {
                pe.extend(row);
            }
        }
    }
    InfluenceMatrix::new(
        test.samples().iter().map(|s| s.id.clone()).collect(),
        train.samples().iter().map(|s| s.id.clone()).collect(),
        totals,
        per_epoch,
        (1..=n_epochs).collect(),
        variant,
        series.fingerprint(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKEntry {
    pub train_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKSet {
    pub test_id: String,
    pub sign: Sign,
    pub k: usize,
    pub entries: Vec<TopKEntry>,
}

/// The `k` highest (positive) or lowest (negative) scoring train samples
/// for one test sample; ties go to the lexicographically smaller train_id.
pub fn topk(matrix: &InfluenceMatrix, test_id: &str, k: usize, sign: Sign) -> Result<TopKSet> {
    topk_filtered(matrix, test_id, k, sign, |_| true)
}

/// As [`topk`], ranking only train columns accepted by `keep`.
pub fn topk_filtered(
    matrix: &InfluenceMatrix,
    test_id: &str,
    k: usize,
    sign: Sign,
    keep: impl Fn(usize) -> bool,
) -> Result<TopKSet> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let t = matrix
        .test_index(test_id)
        .ok_or_else(|| Error::Lookup(format!("test id {test_id} not in matrix")))?;
    let row = matrix.row(t);
    let mut idx: Vec<usize> = (0..row.len()).filter(|&i| keep(i)).collect();
    let cmp = |a: &usize, b: &usize| -> Ordering {
        let by_score = match sign {
            Sign::Positive => row[*b].total_cmp(&row[*a]),
            Sign::Negative => row[*a].total_cmp(&row[*b]),
        };
        by_score.then_with(|| matrix.train_ids[*a].cmp(&matrix.train_ids[*b]))
    };
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    Ok(TopKSet {
        test_id: test_id.into(),
        sign,
        k,
        entries: idx
            .into_iter()
            .map(|i| TopKEntry {
                train_id: matrix.train_ids[i].clone(),
                score: row[i],
            })
            .collect(),
    })
}

/// Top-k sets for every test row.
pub fn topk_all(matrix: &InfluenceMatrix, k: usize, sign: Sign) -> Result<Vec<TopKSet>> {
    matrix.test_ids.iter().map(|t| topk(matrix, t, k, sign)).collect()
}
