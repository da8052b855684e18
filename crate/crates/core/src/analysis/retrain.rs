//! Analyses that retrain the model: removal validation and oversampling
//! sweeps.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::shares::{group_contribution, GroupShareReport};
use crate::dataset::{rebalance, Dataset, Sample};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::influence::{influence_matrix, topk, Sign, TopKSet, TracInOptions, Variant};
use crate::model::{confidence, train, train_masked, CheckpointSeries, Hyperparams};
use crate::rng;

pub const DEFAULT_K_GRID: [usize; 5] = [50, 100, 150, 200, 250];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub k: usize,
    /// Total number of removed samples summed over test groups.
    pub removed: usize,
    /// Size of each test group's removed union.
    pub removed_by_group: BTreeMap<String, usize>,
    pub mean_change_pct: f64,
    pub per_test_change_pct: Vec<f64>,
    /// Same number of uniformly random removals per group.
    pub random_mean_change_pct: f64,
    pub random_per_test_change_pct: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCurve {
    pub sign: Sign,
    pub k_grid: Vec<usize>,
    pub test_ids: Vec<String>,
    pub baseline_confidence: Vec<f64>,
    pub points: Vec<ValidationPoint>,
}

impl ValidationCurve {
    pub fn point(&self, k: usize) -> Option<&ValidationPoint> {
        self.points.iter().find(|p| p.k == k)
    }
}

/// For each k and each test group, retrains without the union of that
/// group's per-test top-k training samples and reports the percentage change
/// in correct-class confidence of the group's tests relative to `base`, next
/// to a random-removal control of the same size.
///
/// `sets` must rank at least `max(k_grid)` entries per test; smaller k use
/// their prefixes. `base` must be the unmasked run of `hyper` on `train_set`.
#[allow(clippy::too_many_arguments)]
pub fn removal_validation<E: Executor>(
    exec: &E,
    train_set: &Dataset,
    dev: &Dataset,
    hyper: &Hyperparams,
    base: &CheckpointSeries,
    tests: &[Sample],
    sets: &[TopKSet],
    k_grid: &[usize],
    seed: u64,
) -> Result<ValidationCurve> {
    if k_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("k grid must be strictly increasing".into()));
    }
    let sign = sets.first().map(|s| s.sign).unwrap_or(Sign::Positive);
    if let Some(&kmax) = k_grid.last() {
        if let Some(s) = sets.iter().find(|s| s.k < kmax && s.entries.len() < train_set.len()) {
            return Err(Error::Config(format!("ranking for {} holds k={}, grid needs {kmax}", s.test_id, s.k)));
        }
    }
    let mut by_test: BTreeMap<&str, &TopKSet> = BTreeMap::new();
    for s in sets {
        by_test.insert(s.test_id.as_str(), s);
    }
    if let Some(s) = sets.iter().find(|s| !tests.iter().any(|t| t.id == s.test_id)) {
        return Err(Error::Lookup(format!("ranking for unknown test sample {}", s.test_id)));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in tests.iter().enumerate() {
        groups.entry(t.group.as_str()).or_default().push(i);
    }
    let base_params = &base.converged().params;
    let baseline: Vec<f64> = tests.iter().map(|t| confidence(base_params, t)).collect::<Result<_>>()?;

    // Jobs in (k, group, [top-k, random]) order.
    let mut masks = Vec::with_capacity(2 * k_grid.len() * groups.len());
    for (ki, &k) in k_grid.iter().enumerate() {
        for (gi, members) in groups.values().enumerate() {
            let mut mask = vec![false; train_set.len()];
            for &ti in members {
                let Some(s) = by_test.get(tests[ti].id.as_str()) else {
                    continue;
                };
                for e in s.entries.iter().take(k) {
                    let i = train_set
                        .position(&e.train_id)
                        .ok_or_else(|| Error::Integrity(format!("train id {} not in dataset", e.train_id)))?;
                    mask[i] = true;
                }
            }
            let removed = mask.iter().filter(|m| **m).count();
            let stream = 0x524e_4400 + (ki * groups.len() + gi) as u64;
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            order.shuffle(&mut rng::derive(seed, stream));
            let mut random = vec![false; train_set.len()];
            for &i in &order[..removed] {
                random[i] = true;
            }
            check_classes(train_set, &mask, k, "top-k")?;
            check_classes(train_set, &random, k, "random")?;
            masks.push(mask);
            masks.push(random);
        }
    }

    let member_lists: Vec<&Vec<usize>> = groups.values().collect();
    let runs: Vec<Result<Vec<f64>>> = exec.map_indexed(masks.len(), |j| {
        let members = member_lists[(j / 2) % member_lists.len()];
        let series = train_masked(train_set, dev, hyper, &masks[j])?;
        let p = &series.converged().params;
        members
            .iter()
            .map(|&ti| {
                let b = baseline[ti];
                Ok(100.0 * (confidence(p, &tests[ti])? - b) / b)
            })
            .collect()
    });
    let mut runs = runs.into_iter();
    let mut points = Vec::with_capacity(k_grid.len());
    for (ki, &k) in k_grid.iter().enumerate() {
        let mut per_test = vec![0.0; tests.len()];
        let mut random = vec![0.0; tests.len()];
        let mut removed_by_group = BTreeMap::new();
        for (gi, (g, members)) in groups.iter().enumerate() {
            let ctx = |what: &str| format!("{what} k={k} group {g}");
            let a = runs.next().unwrap().map_err(|e| e.context(ctx("removal")))?;
            let b = runs.next().unwrap().map_err(|e| e.context(ctx("random removal")))?;
            for (j, &ti) in members.iter().enumerate() {
                per_test[ti] = a[j];
                random[ti] = b[j];
            }
            let n = masks[2 * (ki * groups.len() + gi)].iter().filter(|m| **m).count();
            removed_by_group.insert(String::from(*g), n);
        }
        points.push(ValidationPoint {
            k,
            removed: removed_by_group.values().sum(),
            removed_by_group,
            mean_change_pct: mean(&per_test),
            per_test_change_pct: per_test,
            random_mean_change_pct: mean(&random),
            random_per_test_change_pct: random,
        });
    }
    Ok(ValidationCurve {
        sign,
        k_grid: k_grid.to_vec(),
        test_ids: tests.iter().map(|t| t.id.clone()).collect(),
        baseline_confidence: baseline,
        points,
    })
}

fn check_classes(data: &Dataset, mask: &[bool], k: usize, what: &str) -> Result<()> {
    let mut seen = [false; 2];
    for (s, m) in data.samples().iter().zip(mask) {
        if !m {
            seen[s.label as usize] = true;
        }
    }
    if let Some(c) = seen.iter().position(|x| !x) {
        return Err(Error::DegenerateRemoval(format!("{what} removal at k={k} leaves no samples of class {c}")));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalancePoint {
    pub pct: u32,
    pub train_size: usize,
    pub converged_epoch: usize,
    pub dev_accuracy: f64,
    pub positive: GroupShareReport,
    pub negative: GroupShareReport,
    pub own_positive_share: f64,
    pub own_negative_share: f64,
    /// Shares after merging copies of the same (group, pair) within a ranking.
    pub own_positive_share_collapsed: f64,
    pub own_negative_share_collapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceCurve {
    pub group: String,
    pub k: usize,
    pub points: Vec<ImbalancePoint>,
}

/// Oversamples `group` by each percentage (0 = untouched baseline),
/// retrains, rescores the group's test samples and reports the group's own
/// share of the positive and negative top-k.
#[allow(clippy::too_many_arguments)]
pub fn imbalance_sweep<E: Executor>(
    exec: &E,
    train_set: &Dataset,
    dev: &Dataset,
    hyper: &Hyperparams,
    group: &str,
    pct_grid: &[u32],
    tests: &[Sample],
    k: usize,
    variant: Variant,
    opts: &TracInOptions,
    seed: u64,
) -> Result<ImbalanceCurve> {
    if !train_set.groups().contains(group) {
        return Err(Error::Lookup(format!("unknown group {group}")));
    }
    if let Some(t) = tests.iter().find(|t| t.group != group) {
        return Err(Error::InvalidOperation(format!("test sample {} is not from group {group}", t.id)));
    }
    let test_set = Dataset::new(tests.to_vec())?;
    let opts = TracInOptions {
        keep_per_epoch: false,
        ..*opts
    };
    let mut points = Vec::with_capacity(pct_grid.len());
    for &pct in pct_grid {
        let data = if pct == 0 {
            train_set.clone()
        } else {
            rebalance(train_set, group, pct, seed)?
        };
        let series = train(&data, dev, hyper).map_err(|e| e.context(format!("oversampling {group} by {pct}%")))?;
        let m = influence_matrix(exec, &series, &data, &test_set, variant, &opts)?;
        let mut reports = Vec::new();
        let mut collapsed = Vec::new();
        for sign in [Sign::Positive, Sign::Negative] {
            let sets: Vec<TopKSet> = m.test_ids.iter().map(|t| topk(&m, t, k, sign)).collect::<Result<_>>()?;
            collapsed.push(collapsed_own_share(&sets, &data, group)?);
            reports.push(group_contribution(group, &sets, &data)?);
        }
        let negative = reports.pop().unwrap();
        let positive = reports.pop().unwrap();
        points.push(ImbalancePoint {
            pct,
            train_size: data.len(),
            converged_epoch: series.converged_epoch,
            dev_accuracy: series.converged().dev_metric,
            own_positive_share: positive.share(group),
            own_negative_share: negative.share(group),
            positive,
            negative,
            own_positive_share_collapsed: collapsed[0],
            own_negative_share_collapsed: collapsed[1],
        });
    }
    Ok(ImbalanceCurve {
        group: group.into(),
        k,
        points,
    })
}

fn collapsed_own_share(sets: &[TopKSet], data: &Dataset, group: &str) -> Result<f64> {
    let (mut own, mut total) = (0usize, 0usize);
    for set in sets {
        let mut keys: BTreeSet<(String, String)> = BTreeSet::new();
        for e in &set.entries {
            let s = data
                .get(&e.train_id)
                .ok_or_else(|| Error::Integrity(format!("train id {} not in dataset", e.train_id)))?;
            let content = match &s.pair_id {
                Some(p) => p.clone(),
                None => s.id.split('~').next().unwrap_or(&s.id).into(),
            };
            keys.insert((s.group.clone(), content));
        }
        total += keys.len();
        own += keys.iter().filter(|(g, _)| g == group).count();
    }
    Ok(if total == 0 { 0.0 } else { 100.0 * own as f64 / total as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, split, SynthConfig};
    use crate::exec::Sequential;
    use crate::influence::topk_all;

    fn small() -> (Dataset, Dataset, Vec<Sample>) {
        let d = generate_synthetic(&SynthConfig {
            n_groups: 2,
            per_group: 60,
            latent_dim: 4,
            ..SynthConfig::default()
        })
        .unwrap();
        let parts = split(&d, &[40, 20]).unwrap();
        let tests = [&parts[1].samples()[..2], &parts[1].samples()[20..22]].concat();
        (parts[0].clone(), parts[1].clone(), tests)
    }

    fn hyper() -> Hyperparams {
        Hyperparams {
            epochs_max: 4,
            hidden_dim: 4,
            learning_rate: 0.01,
            batch_size: 8,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn empty_removal_changes_nothing() {
        let (tr, dev, tests) = small();
        let base = train(&tr, &dev, &hyper()).unwrap();
        let c = removal_validation(&Sequential, &tr, &dev, &hyper(), &base, &tests, &[], &[0], 1).unwrap();
        assert_eq!(c.points[0].removed, 0);
        assert!(c.points[0].per_test_change_pct.iter().all(|v| *v == 0.0));
        assert_eq!(c.points[0].mean_change_pct, 0.0);
    }

    #[test]
    fn removal_that_empties_a_class_aborts() {
        let (tr, dev, tests) = small();
        let base = train(&tr, &dev, &hyper()).unwrap();
        let ones: Vec<_> = tr
            .samples()
            .iter()
            .filter(|s| s.label == 1)
            .map(|s| crate::influence::TopKEntry {
                train_id: s.id.clone(),
                score: 1.0,
            })
            .collect();
        let n = ones.len();
        let sets = [TopKSet {
            test_id: tests[0].id.clone(),
            sign: Sign::Positive,
            k: n,
            entries: ones,
        }];
        let e = removal_validation(&Sequential, &tr, &dev, &hyper(), &base, &tests, &sets, &[n], 1).unwrap_err();
        assert!(matches!(e, Error::DegenerateRemoval(_)));
    }

    #[test]
    fn grid_must_increase() {
        let (tr, dev, tests) = small();
        let base = train(&tr, &dev, &hyper()).unwrap();
        assert!(removal_validation(&Sequential, &tr, &dev, &hyper(), &base, &tests, &[], &[5, 5], 1).is_err());
    }

    #[test]
    fn removal_counts_union() {
        let (tr, dev, tests) = small();
        let base = train(&tr, &dev, &hyper()).unwrap();
        let test_set = Dataset::new(tests.clone()).unwrap();
        let m = influence_matrix(&Sequential, &base, &tr, &test_set, Variant::Cosine, &TracInOptions::default()).unwrap();
        let sets = topk_all(&m, 10, Sign::Positive).unwrap();
        let c = removal_validation(&Sequential, &tr, &dev, &hyper(), &base, &tests, &sets, &[5, 10], 3).unwrap();
        let mut total = 0;
        for g in ["de", "en"] {
            let union: BTreeSet<&str> = sets
                .iter()
                .filter(|s| test_set.get(&s.test_id).unwrap().group == g)
                .flat_map(|s| s.entries.iter().map(|e| e.train_id.as_str()))
                .collect();
            total += union.len();
            assert_eq!(c.points[1].removed_by_group.get(g).copied().unwrap_or(0), union.len());
        }
        assert_eq!(c.points[1].removed, total);
        assert!(c.points[0].removed <= c.points[1].removed);
    }

    #[test]
    fn zero_pct_is_baseline() {
        let (tr, dev, _) = small();
        let tests: Vec<Sample> = dev.samples().iter().filter(|s| s.group == "de").take(3).cloned().collect();
        let opts = TracInOptions::default();
        let a = imbalance_sweep(&Sequential, &tr, &dev, &hyper(), "de", &[0, 50], &tests, 10, Variant::Cosine, &opts, 0).unwrap();
        let base = train(&tr, &dev, &hyper()).unwrap();
        assert_eq!(a.points[0].train_size, tr.len());
        assert_eq!(a.points[0].converged_epoch, base.converged_epoch);
        assert_eq!(a.points[1].train_size, tr.len() + 20);
        for p in &a.points {
            let s: f64 = p.positive.shares.values().sum();
            assert!((s - 100.0).abs() < 0.01);
        }
        assert!(imbalance_sweep(&Sequential, &tr, &dev, &hyper(), "xx", &[0], &tests, 10, Variant::Cosine, &opts, 0).is_err());
    }
}
