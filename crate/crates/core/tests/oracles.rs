use tracelens_core::dataset::{generate_synthetic, split, Dataset, LabelRule, PairStructure, SynthConfig};
use tracelens_core::exec::Sequential;
use tracelens_core::model::{grad, loss, train, Hyperparams};
use tracelens_core::oracle::{rank_agreement, HessianOracle, Loo};

fn fixture() -> (Dataset, Dataset, Dataset) {
    let corpus = generate_synthetic(&SynthConfig {
        n_groups: 2,
        per_group: 14,
        pair_structure: PairStructure::Parallel,
        latent_dim: 3,
        group_shift_scale: 0.5,
        noise_scale: 1.0,
        label_rule: LabelRule::MedianProjection,
        seed: 3,
    })
    .unwrap();
    let parts = split(&corpus, &[8, 4, 2]).unwrap();
    (parts[0].clone(), parts[1].clone(), parts[2].clone())
}

fn hyper() -> Hyperparams {
    Hyperparams {
        learning_rate: 0.05,
        epochs_max: 60,
        batch_size: 1000,
        weight_decay: 0.0,
        early_stopping: false,
        ..Hyperparams::linear()
    }
}

#[test]
fn loo_delta_matches_independent_retraining() {
    let (tr, dev, test) = fixture();
    let loo = Loo::new(&tr, &dev, &hyper()).unwrap();
    let all = loo.exhaustive(&Sequential, test.samples()).unwrap();
    assert_eq!(all.len(), tr.len());
    let base = train(&tr, &dev, &hyper()).unwrap();
    for (i, removed) in tr.samples().iter().enumerate() {
        let rest = tr.filter(|s| s.id != removed.id).unwrap();
        let without = train(&rest, &dev, &hyper()).unwrap();
        for (j, t) in test.samples().iter().enumerate() {
            let want = loss(&without.converged().params, t).unwrap() - loss(&base.converged().params, t).unwrap();
            assert!((all[i][j].delta - want).abs() < 1e-6, "{} {}: {} vs {want}", removed.id, t.id, all[i][j].delta);
        }
    }
}

/// Mean-loss Hessian by central differences of the analytic gradient.
fn numeric_hessian(params: &tracelens_core::model::ModelParams, data: &Dataset) -> Vec<Vec<f64>> {
    let n = params.len();
    let h = 1e-5;
    let mut out = vec![vec![0.0; n]; n];
    let mut p = params.clone();
    for j in 0..n {
        let orig = p.values()[j];
        let mut col = vec![0.0; n];
        for (sign, step) in [(1.0, h), (-1.0, -h)] {
            p.values_mut()[j] = orig + step;
            for s in data.samples() {
                for (c, g) in col.iter_mut().zip(grad(&p, s).unwrap().values) {
                    *c += sign * g / (2.0 * h * data.len() as f64);
                }
            }
        }
        p.values_mut()[j] = orig;
        for i in 0..n {
            out[i][j] = col[i];
        }
    }
    out
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

#[test]
fn hessian_score_matches_numeric_solve() {
    let (tr, dev, test) = fixture();
    let damping = 1e-3;
    let params = train(&tr, &dev, &hyper()).unwrap().converged().params.clone();
    let oracle = HessianOracle::new(&params, &tr, damping).unwrap();
    let mut h = numeric_hessian(&params, &tr);
    for (i, row) in h.iter_mut().enumerate() {
        row[i] += damping;
    }
    for z in tr.samples() {
        let gz = grad(&params, z).unwrap().values;
        let x = solve(h.clone(), gz);
        for t in test.samples() {
            let gt = grad(&params, t).unwrap().values;
            let want = -gt.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
            let got = oracle.score(z, t).unwrap().score;
            assert!((got - want).abs() <= 1e-5 * want.abs().max(1.0), "{got} vs {want}");
        }
    }
}

#[test]
fn hessian_needs_linear_mode() {
    let (tr, dev, _) = fixture();
    let mlp = Hyperparams {
        epochs_max: 1,
        hidden_dim: 2,
        ..Hyperparams::default()
    };
    let params = train(&tr, &dev, &mlp).unwrap().converged().params.clone();
    assert!(HessianOracle::new(&params, &tr, 1e-3).is_err());
}

#[test]
fn rank_agreement_on_known_orderings() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let same = rank_agreement(&a, &[10.0, 20.0, 30.0, 40.0, 50.0]).unwrap();
    assert!((same.spearman_rho - 1.0).abs() < 1e-12);
    assert!((same.kendall_tau - 1.0).abs() < 1e-12);
    let rev = rank_agreement(&a, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
    assert!((rev.spearman_rho + 1.0).abs() < 1e-12);
    assert!((rev.kendall_tau + 1.0).abs() < 1e-12);
    // one swapped neighbour pair: rho = 1 - 6·2/(5·24), tau = (9 - 1)/10
    let one = rank_agreement(&a, &[1.0, 2.0, 4.0, 3.0, 5.0]).unwrap();
    assert!((one.spearman_rho - 0.9).abs() < 1e-12);
    assert!((one.kendall_tau - 0.8).abs() < 1e-12);
}
