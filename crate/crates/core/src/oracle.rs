//! Ground truth for the TracIn approximation: leave-one-out retraining,
//! the closed-form Hessian influence of the convex (linear) mode, and rank
//! correlations for comparing score lists.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::model::{self, grad, train, train_masked, CheckpointSeries, Hyperparams, Mode, ModelParams};
use crate::vecmath;

pub const DEFAULT_DAMPING: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub train_id: String,
    pub test_id: String,
    pub loss_with: f64,
    pub loss_without: f64,
    /// `loss_without - loss_with`.
    pub delta: f64,
}

/// Leave-one-out retraining against a fixed base run.
///
/// The base model is trained once; each removal retrains with the same seed
/// and batch schedule, skipping the removed sample's slot.
pub struct Loo<'a> {
    train_set: &'a Dataset,
    dev: &'a Dataset,
    hyper: Hyperparams,
    base: CheckpointSeries,
}

impl<'a> Loo<'a> {
    pub fn new(train_set: &'a Dataset, dev: &'a Dataset, hyper: &Hyperparams) -> Result<Self> {
        let base = train(train_set, dev, hyper)?;
        Ok(Loo {
            train_set,
            dev,
            hyper: hyper.clone(),
            base,
        })
    }

    pub fn base(&self) -> &CheckpointSeries {
        &self.base
    }

    pub fn influence(&self, train_id: &str, tests: &[Sample]) -> Result<Vec<LooResult>> {
        let pos = self
            .train_set
            .position(train_id)
            .ok_or_else(|| Error::Lookup(format!("train id {train_id}")))?;
        let mut mask = vec![false; self.train_set.len()];
        mask[pos] = true;
        let without = train_masked(self.train_set, self.dev, &self.hyper, &mask)
            .map_err(|e| e.context(format!("retraining without {train_id}")))?;
        let with_params = &self.base.converged().params;
        let without_params = &without.converged().params;
        tests
            .iter()
            .map(|t| {
                let loss_with = model::loss(with_params, t)?;
                let loss_without = model::loss(without_params, t)?;
                Ok(LooResult {
                    train_id: train_id.into(),
                    test_id: t.id.clone(),
                    loss_with,
                    loss_without,
                    delta: loss_without - loss_with,
                })
            })
            .collect()
    }

    /// Every removal, as `result[train_index][test_index]`.
    pub fn exhaustive<E: Executor>(&self, exec: &E, tests: &[Sample]) -> Result<Vec<Vec<LooResult>>> {
        exec.map_indexed(self.train_set.len(), |i| {
            self.influence(&self.train_set.samples()[i].id, tests)
        })
        .into_iter()
        .collect()
    }
}

pub fn loo_influence(
    train_set: &Dataset,
    dev: &Dataset,
    hyper: &Hyperparams,
    train_id: &str,
    tests: &[Sample],
) -> Result<Vec<LooResult>> {
    Loo::new(train_set, dev, hyper)?.influence(train_id, tests)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianInfluence {
    pub train_id: String,
    pub test_id: String,
    pub score: f64,
    pub hessian_damping: f64,
}

/// `-∇L(test)ᵀ (H + λI)⁻¹ ∇L(train)` with `H` the mean training-loss
/// Hessian at the given (converged) parameters. Linear mode only.
///
/// The score is the upweighting derivative; removing a sample corresponds to
/// a weight change of `-1/N`, so the predicted leave-one-out loss change is
/// `-score / N`.
#[derive(Debug, Clone)]
pub struct HessianOracle {
    params: ModelParams,
    damped: Vec<f64>,
    n: usize,
    damping: f64,
}

impl HessianOracle {
    pub fn new(params: &ModelParams, train_set: &Dataset, damping: f64) -> Result<Self> {
        if params.mode() != Mode::Linear {
            return Err(Error::Unsupported("Hessian influence needs the convex linear mode".into()));
        }
        if damping.is_nan() || damping < 0.0 {
            return Err(Error::Config("damping must be >= 0".into()));
        }
        let n = params.len();
        let d = params.input_dim();
        let mut h = vec![0.0; n * n];
        let mut xa = vec![0.0; n];
        for s in train_set.samples() {
            let p = model::forward(params, &s.features)?;
            let w = p * (1.0 - p);
            xa[..d].copy_from_slice(&s.features);
            xa[d] = 1.0;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += w * xa[i] * xa[j];
                }
            }
        }
        let inv_n = 1.0 / train_set.len() as f64;
        for (i, v) in h.iter_mut().enumerate() {
            *v *= inv_n;
            if i % (n + 1) == 0 {
                *v += damping;
            }
        }
        Ok(HessianOracle {
            params: params.clone(),
            damped: h,
            n,
            damping,
        })
    }

    /// The damped Hessian, row-major.
    pub fn matrix(&self) -> &[f64] {
        &self.damped
    }

    pub fn score(&self, z_train: &Sample, z_test: &Sample) -> Result<HessianInfluence> {
        let g_train = grad(&self.params, z_train)?;
        let g_test = grad(&self.params, z_test)?;
        let solved = vecmath::cholesky_solve(&self.damped, self.n, &g_train.values)
            .ok_or_else(|| Error::Numeric("damped Hessian is not positive definite".into()))?;
        let score = -vecmath::dot(&g_test.values, &solved);
        if !score.is_finite() {
            return Err(Error::Numeric(format!("non-finite influence for {}", z_train.id)));
        }
        Ok(HessianInfluence {
            train_id: z_train.id.clone(),
            test_id: z_test.id.clone(),
            score,
            hessian_damping: self.damping,
        })
    }
}

pub fn hessian_influence(
    params: &ModelParams,
    train_set: &Dataset,
    z_train: &Sample,
    z_test: &Sample,
    damping: f64,
) -> Result<HessianInfluence> {
    HessianOracle::new(params, train_set, damping)?.score(z_train, z_test)
}

/// 1-based ranks with tied values sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankAgreement {
    pub spearman_rho: f64,
    pub kendall_tau: f64,
}

/// Spearman's rho (Pearson correlation of average ranks) and Kendall's
/// tau-b. Either is NaN when one list is constant.
pub fn rank_agreement(a: &[f64], b: &[f64]) -> Result<RankAgreement> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 3 {
        return Err(Error::InvalidOperation("rank agreement needs at least 3 points".into()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    Ok(RankAgreement {
        spearman_rho: pearson(&ra, &rb),
        kendall_tau: kendall_tau_b(a, b),
    })
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / libm::sqrt(sxx * syy)
}

fn kendall_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i].total_cmp(&x[j]) as i64;
            let dy = y[i].total_cmp(&y[j]) as i64;
            match (dx, dy) {
                (0, 0) => {}
                (0, _) => tie_x += 1,
                (_, 0) => tie_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n1 = (concordant + discordant + tie_x) as f64;
    let n2 = (concordant + discordant + tie_y) as f64;
    (concordant - discordant) as f64 / libm::sqrt(n1 * n2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_reversed() {
        let a = [1.0, 5.0, 2.0, 8.0, -1.0];
        let r = rank_agreement(&a, &a).unwrap();
        assert!((r.spearman_rho - 1.0).abs() < 1e-12);
        assert!((r.kendall_tau - 1.0).abs() < 1e-12);
        let rev: Vec<f64> = a.iter().map(|v| -v).collect();
        let r = rank_agreement(&a, &rev).unwrap();
        assert!((r.spearman_rho + 1.0).abs() < 1e-12);
        assert!((r.kendall_tau + 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_swap_gives_point_eight() {
        // Σd² = 2, n = 4 → 1 - 6·2/60
        let r = rank_agreement(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r.spearman_rho - 0.8).abs() < 1e-12);
        // 5 concordant, 1 discordant
        assert!((r.kendall_tau - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn rank_agreement_errors() {
        assert!(matches!(rank_agreement(&[1.0, 2.0, 3.0], &[1.0, 2.0]), Err(Error::Shape { .. })));
        assert!(rank_agreement(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    fn linear(values: &[f64]) -> ModelParams {
        ModelParams::from_values(Mode::Linear, values.len() - 1, 0, values.to_vec()).unwrap()
    }

    fn s(id: &str, x: &[f64], y: u8) -> Sample {
        Sample::new(id, "g", x.to_vec(), y)
    }

    #[test]
    fn zero_gradient_train_sample_scores_zero() {
        let p = linear(&[0.0, 0.0, 60.0]);
        let d = Dataset::new(vec![s("a", &[1.0, 0.0], 1), s("b", &[0.0, 1.0], 0)]).unwrap();
        // sigmoid(60) rounds to 1, so a's residual is exactly 0
        let h = hessian_influence(&p, &d, &s("a", &[0.0, 0.0], 1), &s("b", &[0.0, 1.0], 0), DEFAULT_DAMPING).unwrap();
        assert_eq!(h.score, 0.0);
        assert_eq!(h.hessian_damping, DEFAULT_DAMPING);
    }

    #[test]
    fn dominant_damping_reduces_to_gradient_product() {
        let p = linear(&[0.2, -0.1, 0.05]);
        let d = Dataset::new(vec![s("a", &[0.01, 0.0], 1), s("b", &[0.0, 0.01], 0)]).unwrap();
        let (za, zb) = (s("x", &[1.0, 2.0], 1), s("y", &[-0.5, 1.0], 0));
        let damping = 1e6;
        let h = hessian_influence(&p, &d, &za, &zb, damping).unwrap();
        let expected = -vecmath::dot(&grad(&p, &zb).unwrap().values, &grad(&p, &za).unwrap().values) / damping;
        assert!((h.score - expected).abs() < 1e-6 * expected.abs());
    }

    #[test]
    fn hessian_influence_is_symmetric() {
        let p = linear(&[0.4, -0.3, 0.1]);
        let d = Dataset::new((0..6).map(|i| s(&format!("z{i}"), &[i as f64 * 0.3 - 1.0, (i % 3) as f64], (i % 2) as u8)).collect()).unwrap();
        let oracle = HessianOracle::new(&p, &d, DEFAULT_DAMPING).unwrap();
        let (a, b) = (&d.samples()[1], &d.samples()[4]);
        let ab = oracle.score(a, b).unwrap().score;
        let ba = oracle.score(b, a).unwrap().score;
        assert!((ab - ba).abs() < 1e-8);
    }

    #[test]
    fn mlp_mode_is_unsupported() {
        let p = ModelParams::zeros(Mode::Mlp, 2, 2);
        let d = Dataset::new(vec![s("a", &[1.0, 0.0], 1)]).unwrap();
        let e = hessian_influence(&p, &d, &d.samples()[0], &d.samples()[0], 1e-3).unwrap_err();
        assert!(matches!(e, Error::Unsupported(_)));
    }

    #[test]
    fn singular_without_damping_is_numeric_error() {
        let p = linear(&[0.0, 0.0, 0.0]);
        // every sample has x = 0, so H has rank 1 (bias only)
        let d = Dataset::new(vec![s("a", &[0.0, 0.0], 1), s("b", &[0.0, 0.0], 0)]).unwrap();
        let e = hessian_influence(&p, &d, &d.samples()[0], &d.samples()[1], 0.0).unwrap_err();
        assert!(matches!(e, Error::Numeric(_)));
    }

    fn four_sample_set() -> (Dataset, Dataset) {
        let tr = Dataset::new(vec![
            s("n0", &[-1.0, 0.2], 0),
            s("n1", &[-0.8, -0.3], 0),
            s("n2", &[-1.2, 0.1], 0),
            s("p0", &[1.0, 0.0], 1),
        ])
        .unwrap();
        (tr.clone(), tr)
    }

    fn loo_hyper() -> Hyperparams {
        Hyperparams {
            learning_rate: 0.1,
            epochs_max: 30,
            patience: 30,
            batch_size: 4,
            ..Hyperparams::linear()
        }
    }

    #[test]
    fn removing_only_positive_hurts_positive_test() {
        let (tr, dev) = four_sample_set();
        let test = s("t", &[0.9, 0.1], 1);
        let r = loo_influence(&tr, &dev, &loo_hyper(), "p0", &[test]).unwrap();
        assert!(r[0].delta > 0.0, "{:?}", r[0]);
        assert_eq!(r[0].delta, r[0].loss_without - r[0].loss_with);
    }

    #[test]
    fn loo_is_deterministic() {
        let (tr, dev) = four_sample_set();
        let tests = [s("t", &[0.9, 0.1], 1)];
        let a = loo_influence(&tr, &dev, &loo_hyper(), "n1", &tests).unwrap();
        let b = loo_influence(&tr, &dev, &loo_hyper(), "n1", &tests).unwrap();
        assert_eq!(a, b);
        assert!(matches!(loo_influence(&tr, &dev, &loo_hyper(), "zz", &tests), Err(Error::Lookup(_))));
    }
}
