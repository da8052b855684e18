use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::influence::{topk, topk_filtered, InfluenceMatrix, Sign, TopKSet};
use crate::model::{confidence, ModelParams};
use crate::rng;

/// Uniformly picks `per_group` correctly predicted samples from each group
/// of `pool`, returned in pool order.
pub fn select_test_samples(params: &ModelParams, pool: &Dataset, per_group: usize, seed: u64) -> Result<Vec<Sample>> {
    let mut chosen: Vec<usize> = Vec::new();
    for (gi, group) in pool.groups().iter().enumerate() {
        let mut correct = Vec::new();
        for (i, s) in pool.samples().iter().enumerate() {
            if &s.group == group && confidence(params, s)? > 0.5 {
                correct.push(i);
            }
        }
        if correct.len() < per_group {
            return Err(Error::Shortage {
                group: group.clone(),
                wanted: per_group,
                available: correct.len(),
            });
        }
        let mut r = rng::derive(seed, 0x5345_4c00 + gi as u64);
        correct.shuffle(&mut r);
        chosen.extend_from_slice(&correct[..per_group]);
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| pool.samples()[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupShareReport {
    pub test_group: String,
    pub sign: Sign,
    pub k: usize,
    pub n_tests: usize,
    /// Percentage of pooled top-k entries per training group.
    pub shares: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
}

impl GroupShareReport {
    pub fn share(&self, group: &str) -> f64 {
        self.shares.get(group).copied().unwrap_or(0.0)
    }

    /// Training group with the largest share; ties go to the earlier name.
    pub fn largest(&self) -> Option<&str> {
        let mut best: Option<(&str, usize)> = None;
        for (g, &c) in &self.counts {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((g, c));
            }
        }
        best.map(|(g, _)| g)
    }

    /// True when the test group's share is strictly larger than every other.
    pub fn own_is_largest(&self) -> bool {
        let own = self.counts.get(&self.test_group).copied().unwrap_or(0);
        self.counts.iter().all(|(g, &c)| g == &self.test_group || c < own)
    }
}

/// Pools the entries of `sets` (all for test samples of `test_group`) and
/// attributes each to its training group.
pub fn group_contribution(test_group: &str, sets: &[TopKSet], train: &Dataset) -> Result<GroupShareReport> {
    let first = sets
        .first()
        .ok_or_else(|| Error::InvalidOperation("no top-k sets to pool".into()))?;
    let mut counts: BTreeMap<String, usize> = train.groups().iter().map(|g| (g.clone(), 0)).collect();
    for set in sets {
        if set.sign != first.sign || set.k != first.k {
            return Err(Error::InvalidOperation("top-k sets differ in sign or k".into()));
        }
        for e in &set.entries {
            let g = train
                .group_of(&e.train_id)
                .ok_or_else(|| Error::Integrity(format!("train id {} not in dataset", e.train_id)))?;
            *counts.get_mut(g).unwrap() += 1;
        }
    }
    let total: usize = counts.values().sum();
    let shares = counts
        .iter()
        .map(|(g, &c)| {
            let pct = if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 };
            (g.clone(), pct)
        })
        .collect();
    Ok(GroupShareReport {
        test_group: test_group.into(),
        sign: first.sign,
        k: first.k,
        n_tests: sets.len(),
        shares,
        counts,
    })
}

/// One report per test group, ranking each test row of `matrix`.
pub fn group_contributions(
    matrix: &InfluenceMatrix,
    test: &Dataset,
    train: &Dataset,
    k: usize,
    sign: Sign,
) -> Result<Vec<GroupShareReport>> {
    let mut by_group: BTreeMap<&str, Vec<TopKSet>> = BTreeMap::new();
    for id in &matrix.test_ids {
        let g = test
            .group_of(id)
            .ok_or_else(|| Error::Integrity(format!("test id {id} not in test set")))?;
        by_group.entry(g).or_default().push(topk(matrix, id, k, sign)?);
    }
    by_group
        .into_iter()
        .map(|(g, sets)| group_contribution(g, &sets, train))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTable {
    /// Test groups.
    pub rows: Vec<String>,
    /// Training groups.
    pub cols: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl GroupTable {
    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        let r = self.rows.iter().position(|x| x == row)?;
        let c = self.cols.iter().position(|x| x == col)?;
        Some(self.values[r][c])
    }
}

/// Mean total score per (test group, training group).
pub fn average_influence_table(matrix: &InfluenceMatrix, train: &Dataset, test: &Dataset) -> Result<GroupTable> {
    let rows: Vec<String> = test.groups().iter().cloned().collect();
    let cols: Vec<String> = train.groups().iter().cloned().collect();
    let col_of: Vec<usize> = matrix
        .train_ids
        .iter()
        .map(|id| {
            let g = train
                .group_of(id)
                .ok_or_else(|| Error::Integrity(format!("train id {id} not in dataset")))?;
            Ok(cols.iter().position(|c| c == g).unwrap())
        })
        .collect::<Result<_>>()?;
    let mut sums = alloc::vec![alloc::vec![0.0; cols.len()]; rows.len()];
    let mut counts = alloc::vec![alloc::vec![0usize; cols.len()]; rows.len()];
    for (t, id) in matrix.test_ids.iter().enumerate() {
        let g = test
            .group_of(id)
            .ok_or_else(|| Error::Integrity(format!("test id {id} not in test set")))?;
        let r = rows.iter().position(|x| x == g).unwrap();
        for (z, v) in matrix.row(t).iter().enumerate() {
            sums[r][col_of[z]] += v;
            counts[r][col_of[z]] += 1;
        }
    }
    let values = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| {
            s.into_iter()
                .zip(c)
                .map(|(s, c)| if c == 0 { 0.0 } else { s / c as f64 })
                .collect()
        })
        .collect();
    Ok(GroupTable { rows, cols, values })
}

/// Top-k restricted to training samples of `group`.
pub fn own_group_topk(
    matrix: &InfluenceMatrix,
    train: &Dataset,
    test_id: &str,
    group: &str,
    k: usize,
    sign: Sign,
) -> Result<TopKSet> {
    let own: Vec<bool> = matrix
        .train_ids
        .iter()
        .map(|id| train.group_of(id) == Some(group))
        .collect();
    topk_filtered(matrix, test_id, k, sign, |i| own[i])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReinforcingReport {
    pub test_group: String,
    pub sign: Sign,
    /// Entries from groups other than the test group, pooled over tests.
    pub other_entries: usize,
    pub reinforcing: usize,
    /// None when there are no other-group entries.
    pub reinforcing_pct: Option<f64>,
    pub complementary_pct: Option<f64>,
}

/// Among other-group entries of each `all` set, the share whose pair_id
/// also occurs in the matching `own` set (the test group's own ranking).
pub fn reinforcing_share(
    own: &[TopKSet],
    all: &[TopKSet],
    train: &Dataset,
    test_group: &str,
) -> Result<ReinforcingReport> {
    if !train.is_parallel() {
        return Err(Error::Unsupported("reinforcing share needs a parallel dataset".into()));
    }
    let pair_of = |id: &str| -> Result<Option<&str>> {
        train
            .get(id)
            .map(|s| s.pair_id.as_deref())
            .ok_or_else(|| Error::Integrity(format!("train id {id} not in dataset")))
    };
    let mut other = 0usize;
    let mut reinforcing = 0usize;
    for set in all {
        let own_set = own
            .iter()
            .find(|o| o.test_id == set.test_id)
            .ok_or_else(|| Error::Lookup(format!("no own-group ranking for {}", set.test_id)))?;
        let own_pairs: BTreeSet<&str> = own_set
            .entries
            .iter()
            .map(|e| pair_of(&e.train_id))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        for e in &set.entries {
            if train.group_of(&e.train_id) == Some(test_group) {
                continue;
            }
            other += 1;
            if let Some(p) = pair_of(&e.train_id)? {
                if own_pairs.contains(p) {
                    reinforcing += 1;
                }
            }
        }
    }
    let pct = (other > 0).then(|| 100.0 * reinforcing as f64 / other as f64);
    Ok(ReinforcingReport {
        test_group: test_group.into(),
        sign: all.first().map(|s| s.sign).unwrap_or(Sign::Positive),
        other_entries: other,
        reinforcing,
        reinforcing_pct: pct,
        complementary_pct: pct.map(|p| 100.0 - p),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub group: String,
    pub sign: Sign,
    /// Group entries in the full model's rankings.
    pub own_entries: usize,
    /// Of those, how many have a translation (same pair_id) in the
    /// zero-shot ranking for the same test sample.
    pub translations_recovered: usize,
    pub translation_recovery_pct: Option<f64>,
    /// Other-group entries in the full model's rankings.
    pub other_entries: usize,
    /// Of those, how many reappear verbatim in the zero-shot ranking.
    pub verbatim_recovered: usize,
    pub verbatim_recovery_pct: Option<f64>,
    pub zero_shot_shares: GroupShareReport,
}

/// Compares rankings of the model trained with `group` against one trained
/// without it, on the same test samples from `group`.
pub fn zero_shot_compare(
    full: &[TopKSet],
    zero_shot: &[TopKSet],
    test: &Dataset,
    full_train: &Dataset,
    zs_train: &Dataset,
    group: &str,
) -> Result<ZeroShotReport> {
    let lookup = |d: &Dataset, id: &str| -> Result<Sample> {
        d.get(id)
            .cloned()
            .ok_or_else(|| Error::Integrity(format!("train id {id} not in dataset")))
    };
    let (mut own, mut own_rec, mut other, mut other_rec) = (0usize, 0usize, 0usize, 0usize);
    for f in full {
        if test.group_of(&f.test_id) != Some(group) {
            return Err(Error::InvalidOperation(format!("test sample {} is not from group {group}", f.test_id)));
        }
        let z = zero_shot
            .iter()
            .find(|z| z.test_id == f.test_id)
            .ok_or_else(|| Error::Lookup(format!("no zero-shot ranking for {}", f.test_id)))?;
        let zs_ids: BTreeSet<&str> = z.entries.iter().map(|e| e.train_id.as_str()).collect();
        let mut zs_pairs: BTreeSet<String> = BTreeSet::new();
        for e in &z.entries {
            if let Some(p) = lookup(zs_train, &e.train_id)?.pair_id {
                zs_pairs.insert(p);
            }
        }
        for e in &f.entries {
            let s = lookup(full_train, &e.train_id)?;
            if s.group == group {
                own += 1;
                if s.pair_id.as_ref().is_some_and(|p| zs_pairs.contains(p)) {
                    own_rec += 1;
                }
            } else {
                other += 1;
                if zs_ids.contains(e.train_id.as_str()) {
                    other_rec += 1;
                }
            }
        }
    }
    let pct = |a: usize, b: usize| (b > 0).then(|| 100.0 * a as f64 / b as f64);
    Ok(ZeroShotReport {
        group: group.into(),
        sign: full.first().map(|s| s.sign).unwrap_or(Sign::Positive),
        own_entries: own,
        translations_recovered: own_rec,
        translation_recovery_pct: pct(own_rec, own),
        other_entries: other,
        verbatim_recovered: other_rec,
        verbatim_recovery_pct: pct(other_rec, other),
        zero_shot_shares: group_contribution(group, zero_shot, zs_train)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::influence::{TopKEntry, Variant};
    use alloc::string::ToString;
    use alloc::vec;

    fn train_set() -> Dataset {
        let mut v = Vec::new();
        for g in ["de", "en", "ko"] {
            for p in 0..5 {
                v.push(Sample::new(format!("{g}_{p}"), g, vec![0.0], 0).with_pair(format!("p{p}")));
            }
        }
        Dataset::new(v).unwrap()
    }

    fn set(test: &str, ids: &[&str]) -> TopKSet {
        TopKSet {
            test_id: test.into(),
            sign: Sign::Positive,
            k: ids.len(),
            entries: ids
                .iter()
                .map(|i| TopKEntry {
                    train_id: i.to_string(),
                    score: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn single_group_pool_is_all_of_it() {
        let r = group_contribution("de", &[set("t", &["de_0", "de_1"])], &train_set()).unwrap();
        assert_eq!(r.share("de"), 100.0);
        assert_eq!(r.share("en"), 0.0);
        assert_eq!(r.share("ko"), 0.0);
    }

    #[test]
    fn sixty_forty_split() {
        let sets = [
            set("t1", &["de_0", "de_1", "en_0", "de_2", "en_1"]),
            set("t2", &["de_3", "en_2", "de_4", "en_3", "de_0"]),
        ];
        let r = group_contribution("de", &sets, &train_set()).unwrap();
        assert!((r.share("de") - 60.0).abs() < 1e-12);
        assert!((r.share("en") - 40.0).abs() < 1e-12);
        assert_eq!(r.counts.values().sum::<usize>(), 10);
        assert!(r.own_is_largest());
        assert_eq!(r.largest(), Some("de"));
        let mut rev = sets.clone();
        rev.reverse();
        assert_eq!(group_contribution("de", &rev, &train_set()).unwrap().shares, r.shares);
    }

    #[test]
    fn unknown_train_id_is_integrity_error() {
        let e = group_contribution("de", &[set("t", &["xx"])], &train_set()).unwrap_err();
        assert!(matches!(e, Error::Integrity(_)));
    }

    #[test]
    fn reinforcing_extremes() {
        let train = train_set();
        let own = [set("t", &["de_0", "de_1"])];
        let all = [set("t", &["de_0", "en_0", "ko_1"])];
        let r = reinforcing_share(&own, &all, &train, "de").unwrap();
        assert_eq!(r.reinforcing_pct, Some(100.0));
        assert_eq!(r.complementary_pct, Some(0.0));
        let all = [set("t", &["de_0", "en_3", "ko_4"])];
        let r = reinforcing_share(&own, &all, &train, "de").unwrap();
        assert_eq!(r.reinforcing_pct, Some(0.0));
        assert_eq!(r.other_entries, 2);
    }

    #[test]
    fn reinforcing_needs_parallel_data() {
        let mut v = train_set().into_samples();
        v.push(Sample::new("de_dup", "de", vec![0.0], 0).with_pair("p0"));
        let d = Dataset::new(v).unwrap();
        let e = reinforcing_share(&[], &[], &d, "de").unwrap_err();
        assert!(matches!(e, Error::Unsupported(_)));
    }

    fn test_set() -> Dataset {
        Dataset::new(vec![Sample::new("t", "ko", vec![0.0], 0), Sample::new("u", "de", vec![0.0], 0)]).unwrap()
    }

    #[test]
    fn zero_shot_self_comparison_is_full_recovery() {
        let train = train_set();
        let full = [set("t", &["ko_0", "de_1", "en_2"])];
        let r = zero_shot_compare(&full, &full, &test_set(), &train, &train, "ko").unwrap();
        assert_eq!(r.translation_recovery_pct, Some(100.0));
        assert_eq!(r.verbatim_recovery_pct, Some(100.0));
    }

    #[test]
    fn zero_shot_translation_and_disjoint() {
        let train = train_set();
        let zs_train = crate::dataset::exclude_group(&train, "ko").unwrap();
        let full = [set("t", &["ko_0", "ko_1", "de_2", "en_3"])];
        let zs = [set("t", &["de_0", "en_4", "de_3", "en_1"])];
        let r = zero_shot_compare(&full, &zs, &test_set(), &train, &zs_train, "ko").unwrap();
        // ko_0 and ko_1 both have translations (de_0, en_1) in the zero-shot list
        assert_eq!(r.translation_recovery_pct, Some(100.0));
        assert_eq!(r.verbatim_recovery_pct, Some(0.0));
        assert_eq!(r.zero_shot_shares.share("ko"), 0.0);
        let zs = [set("t", &["de_4", "en_4", "de_3", "en_2"])];
        let r = zero_shot_compare(&full, &zs, &test_set(), &train, &zs_train, "ko").unwrap();
        assert_eq!(r.translation_recovery_pct, Some(0.0));
        assert_eq!(r.verbatim_recovery_pct, Some(0.0));
    }

    #[test]
    fn zero_shot_rejects_foreign_test_samples() {
        let train = train_set();
        let full = [set("u", &["ko_0"])];
        assert!(matches!(
            zero_shot_compare(&full, &full, &test_set(), &train, &train, "ko"),
            Err(Error::InvalidOperation(_))
        ));
    }

    #[test]
    fn average_table_single_group_equals_mean() {
        let train = Dataset::new(vec![Sample::new("a", "de", vec![0.0], 0), Sample::new("b", "de", vec![0.0], 1)]).unwrap();
        let test = Dataset::new(vec![Sample::new("t", "de", vec![0.0], 0), Sample::new("u", "de", vec![0.0], 1)]).unwrap();
        let m = InfluenceMatrix::new(
            vec!["t".into(), "u".into()],
            vec!["a".into(), "b".into()],
            vec![1.0, 2.0, 3.0, 6.0],
            None,
            vec![1],
            Variant::Dot,
            "f".into(),
        )
        .unwrap();
        let t = average_influence_table(&m, &train, &test).unwrap();
        assert_eq!(t.values, vec![vec![3.0]]);
        assert_eq!(t.get("de", "de"), Some(m.mean()));
    }

    #[test]
    fn shortage_is_reported() {
        let pool = Dataset::new(vec![Sample::new("a", "de", vec![1.0], 1), Sample::new("b", "de", vec![1.0], 1)]).unwrap();
        // always predicts class 0
        let p = ModelParams::from_values(crate::model::Mode::Linear, 1, 0, vec![0.0, -5.0]).unwrap();
        assert!(matches!(select_test_samples(&p, &pool, 1, 0), Err(Error::Shortage { available: 0, .. })));
    }
}
