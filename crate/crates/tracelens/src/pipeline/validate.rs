use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracelens_core::analysis::removal_validation;
use tracelens_core::dataset::{generate_synthetic, split, Dataset};
use tracelens_core::influence::{influence_matrix, topk_all, Sign, TracInOptions, Variant};
use tracelens_core::oracle::{rank_agreement, HessianOracle, Loo, RankAgreement};

use super::{paths, Run};
use crate::error::Result;
use crate::formats::oracle::{write_oracle_csv, OracleRow};
use crate::report::{write_report, write_rows};
use crate::svg::{Chart, Series};

/// Only pairs whose retraining delta exceeds this are sign-compared.
pub const SIGN_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTestSummary {
    pub test_id: String,
    /// Each score list against the retraining deltas.
    pub tracin_cos: RankAgreement,
    pub tracin_dot: RankAgreement,
    /// Predicted removal effect `-score` against the deltas.
    pub hessian: RankAgreement,
    pub max_abs_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub n_train: usize,
    pub retrainings: usize,
    pub damping: f64,
    pub tests: Vec<OracleTestSummary>,
    pub sign_threshold: f64,
    pub sign_pairs: usize,
    pub sign_agreements: usize,
    pub sign_agreement_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalRow {
    pub k: usize,
    pub test_id: String,
    pub group: String,
    pub change_pct: f64,
    pub random_change_pct: f64,
}

pub fn validate(run: &mut Run) -> Result<Value> {
    run.begin("validate")?;
    let mut out = serde_json::Map::new();
    if run.config.validation.oracle {
        let summary = oracle(run)?;
        out.insert(
            "oracle_sign_agreement_pct".into(),
            json!(summary.sign_agreement_pct),
        );
        out.insert(
            "oracle_min_spearman_cos".into(),
            json!(summary.tests.iter().map(|t| t.tracin_cos.spearman_rho).fold(f64::INFINITY, f64::min)),
        );
    }
    if run.config.validation.removal {
        let curve = removal(run)?;
        let points: Vec<Value> = curve
            .points
            .iter()
            .map(|p| json!({"k": p.k, "removed": p.removed, "change_pct": p.mean_change_pct, "random_change_pct": p.random_mean_change_pct}))
            .collect();
        out.insert("removal".into(), json!(points));
    }
    run.finish()?;
    Ok(Value::Object(out))
}

/// Exhaustive leave-one-out on the small convex fixture, compared with
/// TracIn and the inverse-Hessian estimate.
fn oracle(run: &mut Run) -> Result<OracleSummary> {
    let f = run.config.validation.oracle_fixture.clone();
    let seed = run.config.seed;
    let corpus = generate_synthetic(&f.synth_config(seed))?;
    let parts = split(&corpus, &[f.train_per_group, f.dev_per_group, f.pool_per_group])?;
    let (train, dev) = (&parts[0], &parts[1]);
    let tests: Vec<_> = parts[2].samples()[..f.n_tests].to_vec();
    let test_set = Dataset::new(tests.clone())?;
    let hyper = f.hyperparams(seed);

    info!("oracle fixture: {} retrainings", train.len() + 1);
    let loo = Loo::new(train, dev, &hyper)?;
    let deltas = loo.exhaustive(&run.pool, &tests)?;
    let base = loo.base();
    let opts = TracInOptions::default();
    let cos = influence_matrix(&run.pool, base, train, &test_set, Variant::Cosine, &opts)?;
    let dot = influence_matrix(&run.pool, base, train, &test_set, Variant::Dot, &opts)?;
    let hessian = HessianOracle::new(&base.converged().params, train, f.damping)?;

    let n = train.len() as f64;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let (mut pairs, mut agree) = (0usize, 0usize);
    for (ti, t) in tests.iter().enumerate() {
        let mut d = Vec::with_capacity(train.len());
        let mut h = Vec::with_capacity(train.len());
        for (zi, z) in train.samples().iter().enumerate() {
            let r = &deltas[zi][ti];
            let score = hessian.score(z, t)?.score;
            let predicted = -score / n;
            d.push(r.delta);
            h.push(-score);
            if r.delta.abs() > SIGN_THRESHOLD {
                pairs += 1;
                if r.delta.signum() == predicted.signum() {
                    agree += 1;
                }
            }
            let row = |method: &str, value: f64, meta: Value| OracleRow {
                train_id: z.id.clone(),
                test_id: t.id.clone(),
                method: method.into(),
                value,
                metadata: meta.to_string(),
            };
            rows.push(row("loo", r.delta, json!({"loss_with": r.loss_with, "loss_without": r.loss_without})));
            rows.push(row("hessian", score, json!({"damping": f.damping, "predicted_delta": predicted})));
            rows.push(row("tracin_cos", cos.get(ti, zi), json!({"epochs": cos.epochs.len()})));
            rows.push(row("tracin_dot", dot.get(ti, zi), json!({"epochs": dot.epochs.len()})));
        }
        summaries.push(OracleTestSummary {
            test_id: t.id.clone(),
            tracin_cos: rank_agreement(cos.row(ti), &d)?,
            tracin_dot: rank_agreement(dot.row(ti), &d)?,
            hessian: rank_agreement(&h, &d)?,
            max_abs_delta: d.iter().fold(0.0, |a, b| a.max(b.abs())),
        });
    }
    let summary = OracleSummary {
        n_train: train.len(),
        retrainings: train.len() + 1,
        damping: f.damping,
        tests: summaries,
        sign_threshold: SIGN_THRESHOLD,
        sign_pairs: pairs,
        sign_agreements: agree,
        sign_agreement_pct: (pairs > 0).then(|| 100.0 * agree as f64 / pairs as f64),
    };
    let inputs = [paths::CONFIG.to_string()];
    let p = run.output(paths::ORACLE_CSV)?;
    write_oracle_csv(&p, &rows, &run.hash)?;
    run.record(&p, &inputs)?;
    let p = run.output(paths::ORACLE_SUMMARY)?;
    write_report(&p, "oracle_summary", &run.hash, &summary)?;
    run.record(&p, &inputs)?;
    Ok(summary)
}

fn removal(run: &mut Run) -> Result<tracelens_core::analysis::ValidationCurve> {
    let (train, k_train) = run.load_dataset(paths::TRAIN)?;
    let (dev, k_dev) = run.load_dataset(paths::DEV)?;
    let (tests, k_tests) = run.load_dataset(paths::TESTS)?;
    let (series, k_series) = run.load_series(&train)?;
    let (matrix, k_matrix) = run.load_matrix(&series, &train)?;
    let grid = run.config.validation.k_grid.clone();
    let kmax = grid.last().copied().unwrap_or(0);
    let sets = topk_all(&matrix, kmax, Sign::Positive)?;
    info!("removal validation over k = {grid:?}");
    let hyper = run.config.hyperparams();
    let curve = removal_validation(
        &run.pool,
        &train,
        &dev,
        &hyper,
        &series,
        tests.samples(),
        &sets,
        &grid,
        run.config.seed,
    )?;

    let mut inputs = k_series;
    inputs.extend([k_train, k_dev, k_tests, k_matrix]);
    let p = run.output(paths::REMOVAL)?;
    write_report(&p, "removal_validation", &run.hash, &curve)?;
    run.record(&p, &inputs)?;
    let mut rows = Vec::new();
    for pt in &curve.points {
        for (i, t) in tests.samples().iter().enumerate() {
            rows.push(RemovalRow {
                k: pt.k,
                test_id: t.id.clone(),
                group: t.group.clone(),
                change_pct: pt.per_test_change_pct[i],
                random_change_pct: pt.random_per_test_change_pct[i],
            });
        }
    }
    let p = run.output(paths::REMOVAL_CSV)?;
    write_rows(&p, &run.hash, &rows)?;
    run.record(&p, &inputs)?;

    if run.config.analysis.figures {
        let chart = Chart {
            title: "Confidence change after removing the top-k".into(),
            x_label: "k".into(),
            y_label: "mean change in correct-class confidence (%)".into(),
            config_hash: run.hash.clone(),
        };
        let xs: Vec<f64> = curve.points.iter().map(|p| p.k as f64).collect();
        let svg = chart.lines(
            &xs,
            &[
                Series::new("top-k removed", curve.points.iter().map(|p| p.mean_change_pct).collect()),
                Series::new("random removed", curve.points.iter().map(|p| p.random_mean_change_pct).collect()),
            ],
        );
        run.write_figure("removal_curve.svg", &svg, &[paths::REMOVAL.to_string()])?;
    }
    Ok(curve)
}
