//! Labeled, group-tagged samples plus the transforms the analyses need:
//! text featurization, the synthetic parallel-corpus generator, splitting,
//! oversampling a group and dropping a group.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::vecmath;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub group: String,
    pub pair_id: Option<String>,
    pub features: Vec<f64>,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
}

impl Sample {
    pub fn new(id: impl Into<String>, group: impl Into<String>, features: Vec<f64>, label: u8) -> Self {
        Sample {
            id: id.into(),
            group: group.into(),
            pair_id: None,
            features,
            label,
            raw_text: None,
        }
    }

    pub fn with_pair(mut self, pair_id: impl Into<String>) -> Self {
        self.pair_id = Some(pair_id.into());
        self
    }
}

/// An immutable, validated collection of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    groups: BTreeSet<String>,
    index: BTreeMap<String, usize>,
    parallel: bool,
    dims: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidOperation("dataset has no samples".into()));
        }
        let dims = samples[0].features.len();
        let mut index = BTreeMap::new();
        let mut groups = BTreeSet::new();
        let mut seen_pairs: BTreeSet<(&str, &str)> = BTreeSet::new();
        let mut parallel = true;
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dims {
                return Err(Error::Shape {
                    expected: dims,
                    got: s.features.len(),
                }
                .context(format!("sample {}", s.id)));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integrity(format!("sample {} has non-finite features", s.id)));
            }
            if s.label > 1 {
                return Err(Error::Integrity(format!("sample {} has label {} (expected 0 or 1)", s.id, s.label)));
            }
            if index.insert(s.id.clone(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate sample id {}", s.id)));
            }
            groups.insert(s.group.clone());
            if let Some(p) = &s.pair_id {
                if !seen_pairs.insert((p.as_str(), s.group.as_str())) {
                    parallel = false;
                }
            }
        }
        Ok(Dataset {
            samples,
            groups,
            index,
            parallel,
            dims,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn groups(&self) -> &BTreeSet<String> {
        &self.groups
    }

    /// True iff every pair_id occurs at most once per group.
    pub fn is_parallel(&self) -> bool {
        self.parallel
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.index.get(id).map(|&i| &self.samples[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn group_count(&self, group: &str) -> usize {
        self.samples.iter().filter(|s| s.group == group).count()
    }

    pub fn group_counts(&self) -> BTreeMap<String, usize> {
        let mut out: BTreeMap<String, usize> = self.groups.iter().map(|g| (g.clone(), 0)).collect();
        for s in &self.samples {
            *out.get_mut(&s.group).unwrap() += 1;
        }
        out
    }

    pub fn group_of(&self, id: &str) -> Option<&str> {
        self.get(id).map(|s| s.group.as_str())
    }

    /// Hash of the ordered sample ids.
    pub fn fingerprint(&self) -> String {
        fingerprint_ids(self.samples.iter().map(|s| s.id.as_str()))
    }

    /// Keeps samples for which `keep` returns true, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&Sample) -> bool) -> Result<Dataset> {
        Dataset::new(self.samples.iter().filter(|s| keep(s)).cloned().collect())
    }
}

/// FNV-1a over the ids, each terminated by a zero byte, rendered as 16 hex digits.
pub fn fingerprint_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    let mut h = Fnv1a::new(0);
    for id in ids {
        h.write(id.as_bytes());
        h.write(&[0]);
    }
    format!("{:016x}", h.finish())
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Fnv1a(u64);

impl Fnv1a {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    pub(crate) fn new(seed: u64) -> Self {
        let mut h = Fnv1a(Self::OFFSET);
        if seed != 0 {
            h.write(&seed.to_le_bytes());
        }
        h
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }

    pub(crate) fn finish(self) -> u64 {
        self.0
    }
}

/// Hashed character-trigram counts, L2-normalized.
///
/// Text shorter than three characters has no trigrams and maps to the zero
/// vector.
pub fn featurize(text: &str, dims: usize, seed: u64) -> Result<Vec<f64>> {
    if dims == 0 {
        return Err(Error::Config("featurize needs dims >= 1".into()));
    }
    let mut out = vec![0.0; dims];
    let chars: Vec<char> = text.chars().collect();
    let mut buf = [0u8; 12];
    for w in chars.windows(3) {
        let mut h = Fnv1a::new(seed);
        for c in w {
            h.write(c.encode_utf8(&mut buf).as_bytes());
        }
        out[(h.finish() % dims as u64) as usize] += 1.0;
    }
    let n = vecmath::norm(&out);
    if n > 0.0 {
        out.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStructure {
    Parallel,
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Threshold the projection onto a random direction at its median.
    MedianProjection,
    /// Threshold the projection at a fixed value.
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_groups: usize,
    pub per_group: usize,
    pub pair_structure: PairStructure,
    pub latent_dim: usize,
    pub group_shift_scale: f64,
    pub noise_scale: f64,
    pub label_rule: LabelRule,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_groups: 5,
            per_group: 2000,
            pair_structure: PairStructure::Parallel,
            latent_dim: 32,
            group_shift_scale: 1.0,
            noise_scale: 0.5,
            label_rule: LabelRule::MedianProjection,
            seed: 7,
        }
    }
}

const GROUP_NAMES: [&str; 10] = ["de", "en", "es", "fr", "ko", "ru", "tr", "zh", "ar", "hi"];

pub fn group_name(i: usize) -> String {
    GROUP_NAMES
        .get(i)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("g{i}"))
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_groups < 2 {
            return Err(Error::Config("n_groups must be >= 2".into()));
        }
        if self.per_group < 2 {
            return Err(Error::Config("per_group must be >= 2".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be >= 1".into()));
        }
        if !(self.group_shift_scale >= 0.0 && self.noise_scale >= 0.0) {
            return Err(Error::Config("scales must be non-negative".into()));
        }
        Ok(())
    }
}

/// Draws a synthetic corpus. In parallel mode every pair_id carries one
/// latent content vector; each group's copy adds that group's fixed shift
/// and independent noise, and the label is a function of the content only.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let d = config.latent_dim;
    let mut world = rng::derive(config.seed, 0);
    let direction = unit_vector(&mut world, d);
    let shifts: Vec<Vec<f64>> = (0..config.n_groups)
        .map(|_| {
            let mut v = unit_vector(&mut world, d);
            v.iter_mut().for_each(|x| *x *= config.group_shift_scale);
            v
        })
        .collect();

    let mut content = rng::derive(config.seed, 1);
    let n_latents = match config.pair_structure {
        PairStructure::Parallel => config.per_group,
        PairStructure::Independent => config.per_group * config.n_groups,
    };
    let latents: Vec<Vec<f64>> = (0..n_latents)
        .map(|_| (0..d).map(|_| rng::normal(&mut content)).collect())
        .collect();
    let proj: Vec<f64> = latents.iter().map(|l| vecmath::dot(l, &direction)).collect();
    let threshold = match config.label_rule {
        LabelRule::MedianProjection => median(&proj),
        LabelRule::Threshold(t) => t,
    };

    let mut noise = rng::derive(config.seed, 2);
    let mut samples = Vec::with_capacity(config.per_group * config.n_groups);
    for (g, shift) in shifts.iter().enumerate() {
        let group = group_name(g);
        for p in 0..config.per_group {
            let li = match config.pair_structure {
                PairStructure::Parallel => p,
                PairStructure::Independent => g * config.per_group + p,
            };
            let features: Vec<f64> = latents[li]
                .iter()
                .zip(shift)
                .map(|(l, s)| l + s + config.noise_scale * rng::normal(&mut noise))
                .collect();
            let label = u8::from(proj[li] > threshold);
            let mut s = Sample::new(format!("{group}_{p}"), group.clone(), features, label);
            if config.pair_structure == PairStructure::Parallel {
                s.pair_id = Some(format!("p{p}"));
            }
            samples.push(s);
        }
    }
    Dataset::new(samples)
}

fn unit_vector(rng: &mut rng::SeededRng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng::normal(rng)).collect();
        let n = vecmath::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Splits a dataset into consecutive chunks of `sizes[i]` units each.
///
/// When every sample carries a pair_id the unit is a pair_id (taken in
/// first-appearance order), so translations never straddle splits. Otherwise
/// the unit is the per-group position.
pub fn split(dataset: &Dataset, sizes: &[usize]) -> Result<Vec<Dataset>> {
    let bounds: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &n| {
            *acc += n;
            Some(*acc)
        })
        .collect();
    let chunk_of = |pos: usize| bounds.iter().position(|&b| pos < b);
    let mut parts: Vec<Vec<Sample>> = vec![Vec::new(); sizes.len()];
    if dataset.samples.iter().all(|s| s.pair_id.is_some()) {
        let mut order: BTreeMap<&str, usize> = BTreeMap::new();
        for s in &dataset.samples {
            let next = order.len();
            let pos = *order.entry(s.pair_id.as_deref().unwrap()).or_insert(next);
            if let Some(c) = chunk_of(pos) {
                parts[c].push(s.clone());
            }
        }
    } else {
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for s in &dataset.samples {
            let pos = seen.entry(s.group.as_str()).or_insert(0);
            if let Some(c) = chunk_of(*pos) {
                parts[c].push(s.clone());
            }
            *pos += 1;
        }
    }
    parts.into_iter().map(Dataset::new).collect()
}

/// Oversamples `group` by `pct` percent: ⌈pct/100·n⌉ of its samples, drawn
/// without replacement, are appended as duplicates with fresh ids and the
/// original pair_id.
pub fn rebalance(dataset: &Dataset, group: &str, pct: u32, seed: u64) -> Result<Dataset> {
    if !dataset.groups.contains(group) {
        return Err(Error::Lookup(format!("unknown group {group}")));
    }
    if pct == 0 || pct > 100 {
        return Err(Error::Config(format!("rebalance percentage must be in 1..=100, got {pct}")));
    }
    let members: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.samples[i].group == group)
        .collect();
    let n_dup = (pct as usize * members.len()).div_ceil(100);
    let mut pick = members;
    let mut r = rng::derive(seed, 0x5245_4241);
    pick.shuffle(&mut r);
    pick.truncate(n_dup);

    let mut samples = dataset.samples.clone();
    for (j, &i) in pick.iter().enumerate() {
        let orig = &dataset.samples[i];
        let mut id = format!("{}~dup{j}", orig.id);
        while dataset.index.contains_key(&id) {
            id.push('_');
        }
        let mut dup = orig.clone();
        dup.id = id;
        samples.push(dup);
    }
    Dataset::new(samples)
}

/// Removes every sample of `group`.
pub fn exclude_group(dataset: &Dataset, group: &str) -> Result<Dataset> {
    if !dataset.groups.contains(group) {
        return Err(Error::Lookup(format!("unknown group {group}")));
    }
    if dataset.groups.len() == 1 {
        return Err(Error::InvalidOperation(format!("cannot exclude {group}: it is the only group")));
    }
    dataset.filter(|s| s.group != group)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(id: &str, group: &str, pair: Option<&str>) -> Sample {
        let mut x = Sample::new(id, group, vec![1.0, 0.0], 0);
        x.pair_id = pair.map(Into::into);
        x
    }

    #[test]
    fn two_sample_single_group() {
        let d = Dataset::new(vec![s("a", "de", None), s("b", "de", None)]).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.groups().len(), 1);
    }

    #[test]
    fn repeated_pair_in_group_is_not_parallel() {
        let d = Dataset::new(vec![s("a", "de", Some("p1")), s("b", "de", Some("p1"))]).unwrap();
        assert!(!d.is_parallel());
    }

    #[test]
    fn five_by_two_fixture_is_parallel() {
        let mut v = Vec::new();
        for g in ["de", "en", "es", "fr", "ko"] {
            for p in ["p1", "p2"] {
                v.push(s(&format!("{g}_{p}"), g, Some(p)));
            }
        }
        let d = Dataset::new(v).unwrap();
        assert!(d.is_parallel());
        assert_eq!(d.groups().len(), 5);
        assert_eq!(d.len(), 10);
    }

    #[test]
    fn rejects_duplicate_ids_and_bad_labels() {
        let e = Dataset::new(vec![s("a", "de", None), s("a", "en", None)]).unwrap_err();
        assert!(matches!(e, Error::Integrity(_)));
        let mut bad = s("a", "de", None);
        bad.label = 2;
        assert!(matches!(Dataset::new(vec![bad]).unwrap_err(), Error::Integrity(_)));
    }

    #[test]
    fn rejects_ragged_features() {
        let mut b = s("b", "de", None);
        b.features = vec![1.0];
        assert_eq!(Dataset::new(vec![s("a", "de", None), b]).unwrap_err().kind(), "shape");
    }

    #[test]
    fn featurize_empty_is_zero() {
        assert_eq!(featurize("", 64, 0).unwrap(), vec![0.0; 64]);
        assert!(featurize("x", 0, 0).is_err());
    }

    #[test]
    fn featurize_is_deterministic() {
        let a = featurize("abc", 64, 0).unwrap();
        let b = featurize("abc", 64, 0).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_ne!(featurize("abc", 64, 1).unwrap(), featurize("abd", 64, 1).unwrap());
    }

    #[test]
    fn featurize_abcd_counts_two_trigrams() {
        // "abcd" has trigrams "abc" and "bcd"; recompute buckets independently.
        let bucket = |t: &str| {
            let mut h = Fnv1a::new(0);
            h.write(t.as_bytes());
            (h.finish() % 64) as usize
        };
        let mut counts = [0.0f64; 64];
        counts[bucket("abc")] += 1.0;
        counts[bucket("bcd")] += 1.0;
        let n = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        let v = featurize("abcd", 64, 0).unwrap();
        assert_eq!(v.iter().filter(|x| **x != 0.0).count(), counts.iter().filter(|x| **x != 0.0).count());
        for (a, c) in v.iter().zip(counts) {
            assert!((a - c / n).abs() < 1e-15);
        }
        assert!((vecmath::norm(&v) - 1.0).abs() < 1e-12);
    }

    fn cfg(n_groups: usize, per_group: usize) -> SynthConfig {
        SynthConfig {
            n_groups,
            per_group,
            latent_dim: 8,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn small_parallel_generation() {
        let d = generate_synthetic(&cfg(2, 3)).unwrap();
        assert_eq!(d.len(), 6);
        assert!(d.is_parallel());
        let mut by_pair: BTreeMap<&str, Vec<&Sample>> = BTreeMap::new();
        for s in d.samples() {
            by_pair.entry(s.pair_id.as_deref().unwrap()).or_default().push(s);
        }
        assert_eq!(by_pair.len(), 3);
        for members in by_pair.values() {
            assert_eq!(members.len(), 2);
            assert_ne!(members[0].group, members[1].group);
            assert_eq!(members[0].label, members[1].label);
        }
    }

    #[test]
    fn degenerate_generation_gives_identical_translations() {
        let c = SynthConfig {
            noise_scale: 0.0,
            group_shift_scale: 0.0,
            ..cfg(3, 4)
        };
        let d = generate_synthetic(&c).unwrap();
        for p in 0..4 {
            let a = d.get(&format!("de_{p}")).unwrap();
            for g in ["en", "es"] {
                assert_eq!(a.features, d.get(&format!("{g}_{p}")).unwrap().features);
            }
        }
    }

    #[test]
    fn standard_generation_is_label_balanced() {
        let c = SynthConfig {
            n_groups: 5,
            per_group: 400,
            seed: 7,
            ..SynthConfig::default()
        };
        let d = generate_synthetic(&c).unwrap();
        assert_eq!(d.len(), 2000);
        for g in d.groups() {
            let pos = d.samples().iter().filter(|s| &s.group == g && s.label == 1).count();
            let frac = pos as f64 / 400.0;
            assert!((0.45..=0.55).contains(&frac), "{g}: {frac}");
        }
    }

    #[test]
    fn independent_mode_has_no_pairs() {
        let c = SynthConfig {
            pair_structure: PairStructure::Independent,
            ..cfg(2, 5)
        };
        let d = generate_synthetic(&c).unwrap();
        assert!(d.samples().iter().all(|s| s.pair_id.is_none()));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate_synthetic(&cfg(1, 5)).is_err());
        assert!(generate_synthetic(&cfg(2, 1)).is_err());
        let c = SynthConfig {
            noise_scale: -1.0,
            ..cfg(2, 2)
        };
        assert!(generate_synthetic(&c).is_err());
    }

    #[test]
    fn split_keeps_pairs_together() {
        let d = generate_synthetic(&cfg(3, 10)).unwrap();
        let parts = split(&d, &[6, 4]).unwrap();
        assert_eq!(parts[0].len(), 18);
        assert_eq!(parts[1].len(), 12);
        let a: BTreeSet<_> = parts[0].samples().iter().map(|s| s.pair_id.clone()).collect();
        assert!(parts[1].samples().iter().all(|s| !a.contains(&s.pair_id)));
    }

    #[test]
    fn rebalance_group_of_four_by_quarter() {
        let d = generate_synthetic(&cfg(2, 4)).unwrap();
        let r = rebalance(&d, "de", 25, 0).unwrap();
        assert_eq!(r.len(), 9);
        assert_eq!(r.group_count("de"), 5);
        assert_eq!(r.group_count("en"), 4);
        let orig: BTreeSet<_> = d.samples().iter().map(|s| s.id.clone()).collect();
        let dup = &r.samples()[8];
        assert!(!orig.contains(&dup.id));
        assert!(dup.pair_id.is_some());
        assert_eq!(&r.samples()[..8], d.samples());
    }

    #[test]
    fn rebalance_full_doubles_group() {
        let d = generate_synthetic(&SynthConfig {
            per_group: 2000,
            latent_dim: 4,
            ..SynthConfig::default()
        })
        .unwrap();
        let r = rebalance(&d, "en", 100, 3).unwrap();
        assert_eq!(r.group_count("en"), 4000);
        assert_eq!(r.group_count("de"), 2000);
        assert!(matches!(rebalance(&d, "xx", 50, 0), Err(Error::Lookup(_))));
    }

    #[test]
    fn exclude_group_filters() {
        let d = generate_synthetic(&cfg(5, 6)).unwrap();
        let e = exclude_group(&d, "ko").unwrap();
        assert_eq!(e.groups().len(), 4);
        assert_eq!(e.len(), d.len() - 6);
        assert!(e.is_parallel());
        assert_eq!(d.len(), 30);
        let single = exclude_group(&exclude_group(&exclude_group(&exclude_group(&d, "de").unwrap(), "en").unwrap(), "es").unwrap(), "fr").unwrap();
        assert!(matches!(exclude_group(&single, "ko"), Err(Error::InvalidOperation(_))));
    }
}
