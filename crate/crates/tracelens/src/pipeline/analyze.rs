use std::collections::BTreeMap;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracelens_core::analysis::{
    average_influence_table, epoch_dynamics, group_contributions, imbalance_sweep, own_group_topk, reinforcing_share,
    zero_shot_compare, EpochDynamicsReport, GroupShareReport, GroupTable, ImbalanceCurve, ReinforcingReport,
    ZeroShotReport,
};
use tracelens_core::dataset::{exclude_group, Dataset};
use tracelens_core::influence::{influence_matrix, topk, InfluenceMatrix, Sign, TopKSet, TracInOptions};
use tracelens_core::model::train as train_model;

use super::{paths, Run};
use crate::error::{CliError, Result};
use crate::report::{write_report, write_rows};
use crate::svg::{Chart, Series};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSharesReport {
    pub k: usize,
    pub positive: Vec<GroupShareReport>,
    pub negative: Vec<GroupShareReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReinforcingSummary {
    pub k: usize,
    /// Empty when the training set is not parallel.
    pub groups: Vec<ReinforcingReport>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSummary {
    pub positive: EpochDynamicsReport,
    pub negative: EpochDynamicsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotRun {
    pub group: String,
    pub converged_epoch: usize,
    pub dev_accuracy: f64,
    /// Shares of the full model's rankings for the same test samples.
    pub full_shares: Vec<GroupShareReport>,
    pub comparisons: Vec<ZeroShotReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotSummary {
    pub k: usize,
    pub runs: Vec<ZeroShotRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceSummary {
    pub k: usize,
    pub curves: Vec<ImbalanceCurve>,
}

#[derive(Serialize)]
struct ShareRow<'a> {
    test_group: &'a str,
    sign: Sign,
    train_group: &'a str,
    share_pct: f64,
    count: usize,
}

#[derive(Serialize)]
struct TableRow<'a> {
    test_group: &'a str,
    train_group: &'a str,
    mean_score: f64,
}

#[derive(Serialize)]
struct DynamicsRow<'a> {
    sign: Sign,
    epoch: usize,
    test_group: &'a str,
    own_share_pct: f64,
}

#[derive(Serialize)]
struct ZeroShotRow<'a> {
    group: &'a str,
    sign: Sign,
    translation_recovery_pct: Option<f64>,
    verbatim_recovery_pct: Option<f64>,
    own_entries: usize,
    other_entries: usize,
}

#[derive(Serialize)]
struct ImbalanceRow<'a> {
    group: &'a str,
    pct: u32,
    train_size: usize,
    own_positive_share_pct: f64,
    own_negative_share_pct: f64,
    own_positive_share_collapsed_pct: f64,
    own_negative_share_collapsed_pct: f64,
}

struct Inputs {
    train: Dataset,
    dev: Dataset,
    tests: Dataset,
    matrix: InfluenceMatrix,
    keys: Vec<String>,
}

pub fn analyze(run: &mut Run) -> Result<Value> {
    run.begin("analyze")?;
    let (train, k_train) = run.load_dataset(paths::TRAIN)?;
    let (dev, k_dev) = run.load_dataset(paths::DEV)?;
    let (tests, k_tests) = run.load_dataset(paths::TESTS)?;
    let (series, mut keys) = run.load_series(&train)?;
    let (matrix, k_matrix) = run.load_matrix(&series, &train)?;
    keys.extend([k_train, k_dev, k_tests, k_matrix]);
    let inp = Inputs {
        train,
        dev,
        tests,
        matrix,
        keys,
    };

    let mut out = serde_json::Map::new();
    out.insert("own_group_largest_positive".into(), shares(run, &inp)?);
    table(run, &inp)?;
    if run.config.analysis.reinforcing {
        out.insert("reinforcing_pct".into(), reinforcing(run, &inp)?);
    }
    out.insert("wilcoxon_p".into(), dynamics(run, &inp)?);
    if !run.config.analysis.zero_shot_groups.is_empty() {
        out.insert("zero_shot".into(), zero_shot(run, &inp)?);
    }
    if !run.config.analysis.imbalance_pcts.is_empty() {
        out.insert("imbalance_own_positive".into(), imbalance(run, &inp)?);
    }
    run.finish()?;
    Ok(Value::Object(out))
}

fn shares(run: &mut Run, inp: &Inputs) -> Result<Value> {
    let k = run.config.influence.k;
    let report = GroupSharesReport {
        k,
        positive: group_contributions(&inp.matrix, &inp.tests, &inp.train, k, Sign::Positive)?,
        negative: group_contributions(&inp.matrix, &inp.tests, &inp.train, k, Sign::Negative)?,
    };
    let p = run.output(paths::GROUP_SHARES)?;
    write_report(&p, "group_shares", &run.hash, &report)?;
    run.record(&p, &inp.keys)?;
    let mut rows = Vec::new();
    for r in report.positive.iter().chain(&report.negative) {
        for (g, s) in &r.shares {
            rows.push(ShareRow {
                test_group: &r.test_group,
                sign: r.sign,
                train_group: g,
                share_pct: *s,
                count: r.counts[g],
            });
        }
    }
    let p = run.output(paths::GROUP_SHARES_CSV)?;
    write_rows(&p, &run.hash, &rows)?;
    run.record(&p, &inp.keys)?;

    if run.config.analysis.figures {
        for (name, reports) in [("positive", &report.positive), ("negative", &report.negative)] {
            let svg = share_chart(run, &format!("Group shares of the top-{k} {name} influences"), reports);
            run.write_figure(&format!("group_shares_{name}.svg"), &svg, &[paths::GROUP_SHARES.to_string()])?;
        }
    }
    let own: BTreeMap<&str, bool> = report
        .positive
        .iter()
        .map(|r| (r.test_group.as_str(), r.own_is_largest()))
        .collect();
    Ok(json!(own))
}

/// Clusters by test group, one bar per training group.
fn share_chart(run: &Run, title: &str, reports: &[GroupShareReport]) -> String {
    let cats: Vec<String> = reports.iter().map(|r| r.test_group.clone()).collect();
    let train_groups: Vec<String> = reports
        .first()
        .map(|r| r.shares.keys().cloned().collect())
        .unwrap_or_default();
    let series: Vec<Series> = train_groups
        .iter()
        .map(|g| Series::new(g.clone(), reports.iter().map(|r| r.share(g)).collect()))
        .collect();
    Chart {
        title: title.into(),
        x_label: "test group".into(),
        y_label: "share of top-k (%)".into(),
        config_hash: run.hash.clone(),
    }
    .bars(&cats, &series)
}

fn table(run: &mut Run, inp: &Inputs) -> Result<GroupTable> {
    let t = average_influence_table(&inp.matrix, &inp.train, &inp.tests)?;
    let p = run.output(paths::INFLUENCE_TABLE)?;
    write_report(&p, "influence_table", &run.hash, &t)?;
    run.record(&p, &inp.keys)?;
    let mut rows = Vec::new();
    for (i, r) in t.rows.iter().enumerate() {
        for (j, c) in t.cols.iter().enumerate() {
            rows.push(TableRow {
                test_group: r,
                train_group: c,
                mean_score: t.values[i][j],
            });
        }
    }
    let p = run.output(paths::INFLUENCE_TABLE_CSV)?;
    write_rows(&p, &run.hash, &rows)?;
    run.record(&p, &inp.keys)?;
    Ok(t)
}

fn sets_by_group(matrix: &InfluenceMatrix, tests: &Dataset, k: usize, sign: Sign) -> Result<BTreeMap<String, Vec<TopKSet>>> {
    let mut by: BTreeMap<String, Vec<TopKSet>> = BTreeMap::new();
    for t in tests.samples() {
        by.entry(t.group.clone()).or_default().push(topk(matrix, &t.id, k, sign)?);
    }
    Ok(by)
}

fn reinforcing(run: &mut Run, inp: &Inputs) -> Result<Value> {
    let k = run.config.influence.k;
    let mut summary = ReinforcingSummary {
        k,
        groups: Vec::new(),
        skipped: None,
    };
    if inp.train.is_parallel() {
        for (g, all) in sets_by_group(&inp.matrix, &inp.tests, k, Sign::Positive)? {
            let own: Vec<TopKSet> = all
                .iter()
                .map(|s| own_group_topk(&inp.matrix, &inp.train, &s.test_id, &g, k, Sign::Positive))
                .collect::<tracelens_core::Result<_>>()?;
            summary.groups.push(reinforcing_share(&own, &all, &inp.train, &g)?);
        }
    } else {
        summary.skipped = Some("training set is not parallel".into());
    }
    let p = run.output(paths::REINFORCING)?;
    write_report(&p, "reinforcing", &run.hash, &summary)?;
    run.record(&p, &inp.keys)?;
    let p = run.output(paths::REINFORCING_CSV)?;
    write_rows(&p, &run.hash, &summary.groups)?;
    run.record(&p, &inp.keys)?;
    let pct: BTreeMap<&str, Option<f64>> = summary
        .groups
        .iter()
        .map(|r| (r.test_group.as_str(), r.reinforcing_pct))
        .collect();
    Ok(json!(pct))
}

fn dynamics(run: &mut Run, inp: &Inputs) -> Result<Value> {
    let k = run.config.influence.k;
    let mode = run.config.analysis.dynamics_mode;
    let summary = DynamicsSummary {
        positive: epoch_dynamics(&inp.matrix, &inp.train, &inp.tests, k, Sign::Positive, mode)?,
        negative: epoch_dynamics(&inp.matrix, &inp.train, &inp.tests, k, Sign::Negative, mode)?,
    };
    let p = run.output(paths::DYNAMICS)?;
    write_report(&p, "epoch_dynamics", &run.hash, &summary)?;
    run.record(&p, &inp.keys)?;
    let mut rows = Vec::new();
    for r in [&summary.positive, &summary.negative] {
        for e in &r.epochs {
            for (g, s) in &e.own_share {
                rows.push(DynamicsRow {
                    sign: r.sign,
                    epoch: e.epoch,
                    test_group: g,
                    own_share_pct: *s,
                });
            }
        }
    }
    let p = run.output(paths::DYNAMICS_CSV)?;
    write_rows(&p, &run.hash, &rows)?;
    run.record(&p, &inp.keys)?;

    if run.config.analysis.figures && !summary.positive.epochs.is_empty() {
        let xs: Vec<f64> = summary.positive.epochs.iter().map(|e| e.epoch as f64).collect();
        for r in [&summary.positive, &summary.negative] {
            let name = match r.sign {
                Sign::Positive => "positive",
                Sign::Negative => "negative",
            };
            let groups: Vec<&String> = r.epochs[0].own_share.keys().collect();
            let series: Vec<Series> = groups
                .iter()
                .map(|g| Series::new(g.as_str(), r.epochs.iter().map(|e| e.own_share[*g]).collect()))
                .collect();
            let svg = Chart {
                title: format!("Own-group share of the top-{k} {name} influences per epoch"),
                x_label: "epoch".into(),
                y_label: "own-group share (%)".into(),
                config_hash: run.hash.clone(),
            }
            .lines(&xs, &series);
            run.write_figure(&format!("epoch_dynamics_{name}.svg"), &svg, &[paths::DYNAMICS.to_string()])?;
        }
    }
    let p: Vec<Value> = summary
        .positive
        .wilcoxon
        .iter()
        .map(|w| json!({"from": w.from_epoch, "to": w.to_epoch, "p": w.result.p_value}))
        .collect();
    Ok(json!(p))
}

fn zero_shot(run: &mut Run, inp: &Inputs) -> Result<Value> {
    let k = run.config.influence.k;
    let hyper = run.config.hyperparams();
    let variant = inp.matrix.variant;
    let opts = TracInOptions {
        keep_per_epoch: false,
        ..run.config.tracin_options()
    };
    let signs: &[Sign] = if run.config.analysis.zero_shot_both_signs {
        &[Sign::Positive, Sign::Negative]
    } else {
        &[Sign::Positive]
    };
    let mut summary = ZeroShotSummary { k, runs: Vec::new() };
    for g in run.config.analysis.zero_shot_groups.clone() {
        if !inp.train.groups().contains(&g) {
            return Err(CliError::Config(format!("zero-shot group {g} is not in the training data")));
        }
        info!("zero-shot: retraining without {g}");
        let zs_train = exclude_group(&inp.train, &g)?;
        let zs_dev = exclude_group(&inp.dev, &g)?;
        let series = train_model(&zs_train, &zs_dev, &hyper)?;
        let ids: Vec<String> = inp
            .tests
            .samples()
            .iter()
            .filter(|t| t.group == g)
            .map(|t| t.id.clone())
            .collect();
        let test_g = inp.tests.filter(|t| t.group == g)?;
        let full = inp.matrix.select_tests(&ids)?;
        let zs = influence_matrix(&run.pool, &series, &zs_train, &test_g, variant, &opts)?.to_f32_precision();
        let mut comparisons = Vec::new();
        let mut full_shares = Vec::new();
        for &sign in signs {
            let f_sets: Vec<TopKSet> = ids.iter().map(|id| topk(&full, id, k, sign)).collect::<tracelens_core::Result<_>>()?;
            let z_sets: Vec<TopKSet> = ids.iter().map(|id| topk(&zs, id, k, sign)).collect::<tracelens_core::Result<_>>()?;
            full_shares.push(tracelens_core::analysis::group_contribution(&g, &f_sets, &inp.train)?);
            comparisons.push(zero_shot_compare(&f_sets, &z_sets, &test_g, &inp.train, &zs_train, &g)?);
        }
        summary.runs.push(ZeroShotRun {
            group: g,
            converged_epoch: series.converged_epoch,
            dev_accuracy: series.converged().dev_metric,
            full_shares,
            comparisons,
        });
    }
    let p = run.output(paths::ZERO_SHOT)?;
    write_report(&p, "zero_shot", &run.hash, &summary)?;
    run.record(&p, &inp.keys)?;
    let rows: Vec<ZeroShotRow> = summary
        .runs
        .iter()
        .flat_map(|r| {
            r.comparisons.iter().map(move |c| ZeroShotRow {
                group: &r.group,
                sign: c.sign,
                translation_recovery_pct: c.translation_recovery_pct,
                verbatim_recovery_pct: c.verbatim_recovery_pct,
                own_entries: c.own_entries,
                other_entries: c.other_entries,
            })
        })
        .collect();
    let p = run.output(paths::ZERO_SHOT_CSV)?;
    write_rows(&p, &run.hash, &rows)?;
    run.record(&p, &inp.keys)?;

    if run.config.analysis.figures {
        for r in &summary.runs {
            let full = &r.full_shares[0];
            let zs = &r.comparisons[0].zero_shot_shares;
            let groups: Vec<String> = full.shares.keys().cloned().collect();
            let svg = Chart {
                title: format!("Top-{k} positive shares for {} tests, with and without {} in training", r.group, r.group),
                x_label: "training group".into(),
                y_label: "share of top-k (%)".into(),
                config_hash: run.hash.clone(),
            }
            .bars(
                &groups,
                &[
                    Series::new("full model", groups.iter().map(|g| full.share(g)).collect()),
                    Series::new("zero-shot model", groups.iter().map(|g| zs.share(g)).collect()),
                ],
            );
            run.write_figure(&format!("zero_shot_{}.svg", r.group), &svg, &[paths::ZERO_SHOT.to_string()])?;
        }
    }
    let v: Vec<Value> = summary
        .runs
        .iter()
        .map(|r| {
            json!({
                "group": r.group,
                "translation_recovery_pct": r.comparisons[0].translation_recovery_pct,
                "verbatim_recovery_pct": r.comparisons[0].verbatim_recovery_pct,
            })
        })
        .collect();
    Ok(json!(v))
}

fn imbalance(run: &mut Run, inp: &Inputs) -> Result<Value> {
    let k = run.config.influence.k;
    let hyper = run.config.hyperparams();
    let opts = run.config.tracin_options();
    let mut grid = vec![0u32];
    grid.extend(run.config.analysis.imbalance_pcts.iter().copied());
    let groups: Vec<String> = if run.config.analysis.imbalance_groups.is_empty() {
        inp.train.groups().iter().cloned().collect()
    } else {
        run.config.analysis.imbalance_groups.clone()
    };
    let mut summary = ImbalanceSummary { k, curves: Vec::new() };
    for g in &groups {
        info!("imbalance sweep for {g} over {grid:?}");
        let tests: Vec<_> = inp.tests.samples().iter().filter(|t| &t.group == g).cloned().collect();
        if tests.is_empty() {
            return Err(CliError::Config(format!("imbalance group {g} has no test samples")));
        }
        let curve = imbalance_sweep(
            &run.pool,
            &inp.train,
            &inp.dev,
            &hyper,
            g,
            &grid,
            &tests,
            k,
            inp.matrix.variant,
            &opts,
            run.config.seed,
        )?;
        summary.curves.push(curve);
    }
    let p = run.output(paths::IMBALANCE)?;
    write_report(&p, "imbalance", &run.hash, &summary)?;
    run.record(&p, &inp.keys)?;
    let rows: Vec<ImbalanceRow> = summary
        .curves
        .iter()
        .flat_map(|c| {
            c.points.iter().map(move |p| ImbalanceRow {
                group: &c.group,
                pct: p.pct,
                train_size: p.train_size,
                own_positive_share_pct: p.own_positive_share,
                own_negative_share_pct: p.own_negative_share,
                own_positive_share_collapsed_pct: p.own_positive_share_collapsed,
                own_negative_share_collapsed_pct: p.own_negative_share_collapsed,
            })
        })
        .collect();
    let p = run.output(paths::IMBALANCE_CSV)?;
    write_rows(&p, &run.hash, &rows)?;
    run.record(&p, &inp.keys)?;

    if run.config.analysis.figures {
        let xs: Vec<f64> = grid.iter().map(|p| *p as f64).collect();
        for (name, pick) in [("positive", true), ("negative", false)] {
            let series: Vec<Series> = summary
                .curves
                .iter()
                .map(|c| {
                    let v = c
                        .points
                        .iter()
                        .map(|p| if pick { p.own_positive_share } else { p.own_negative_share })
                        .collect();
                    Series::new(c.group.as_str(), v)
                })
                .collect();
            let svg = Chart {
                title: format!("Own-group share of the top-{k} {name} influences under oversampling"),
                x_label: "samples added to the group (%)".into(),
                y_label: "own-group share (%)".into(),
                config_hash: run.hash.clone(),
            }
            .lines(&xs, &series);
            run.write_figure(&format!("imbalance_{name}.svg"), &svg, &[paths::IMBALANCE.to_string()])?;
        }
    }
    let v: BTreeMap<&str, Vec<(u32, f64)>> = summary
        .curves
        .iter()
        .map(|c| (c.group.as_str(), c.points.iter().map(|p| (p.pct, p.own_positive_share)).collect()))
        .collect();
    Ok(json!(v))
}
