use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentError, FoldPlan, Result, StrategyResult, Strategy, TrialConfig};
use crate::cohort::Cohort;
use crate::metrics::{summarize_folds, MetricSummary};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const METADATA_FILE: &str = "metadata.json";

/// Protocol choices recorded alongside every run.
pub const METHOD_NOTES: [&str; 6] = [
    "std is the population standard deviation across outer folds",
    "AUROC at the horizon excludes patients censored at or before it; folds without positives or negatives are left out of its summary",
    "epochs for the outer refit are the median of the best trial's inner best epochs, rounded and clamped to [1, 200]",
    "hyperparameters are chosen by seeded random search over the fixed search space",
    "late-fusion alpha maximises the mean C-index over inner validation folds and is applied to outer-test predictions of the refitted unimodal models",
    "leibovich_rt reports the mean C-index over random tie-breaking repeats; its AUROC counts ties as 0.5",
];

/// One line of the results file. Field order is part of the format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub strategy: Strategy,
    pub fold: usize,
    pub c_index: f64,
    pub auroc: Option<f64>,
    pub alpha: Option<f64>,
    pub epochs: BTreeMap<String, usize>,
    pub trial_config: BTreeMap<String, TrialConfig>,
    pub seeds: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub cohort_sha256: String,
    pub fold_plan_sha256: String,
    pub point_table_sha256: String,
    pub horizon_months: f64,
    pub notes: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn records(results: &[StrategyResult]) -> Vec<ResultRecord> {
    results
        .iter()
        .flat_map(|r| {
            r.folds.iter().map(move |f| ResultRecord {
                strategy: r.strategy,
                fold: f.fold,
                c_index: f.c_index,
                auroc: f.auroc,
                alpha: f.alpha,
                epochs: f.epochs.clone(),
                trial_config: f.trial_config.clone(),
                seeds: f.seeds.clone(),
            })
        })
        .collect()
}

pub fn parse_results(text: &str) -> Result<Vec<ResultRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ExperimentError::MalformedResults {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Per-strategy C-index and AUROC summaries, in strategy order.
pub fn summarize_records(records: &[ResultRecord]) -> Result<Vec<(Strategy, MetricSummary, Option<MetricSummary>)>> {
    let mut grouped: BTreeMap<Strategy, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.strategy).or_default().push(r);
    }
    grouped
        .into_iter()
        .map(|(s, mut rs)| {
            rs.sort_by_key(|r| r.fold);
            let c = summarize_folds(&rs.iter().map(|r| r.c_index).collect::<Vec<_>>())?;
            let defined: Vec<f64> = rs.iter().filter_map(|r| r.auroc).collect();
            let a = if defined.is_empty() {
                None
            } else {
                Some(summarize_folds(&defined)?)
            };
            Ok((s, c, a))
        })
        .collect()
}

/// Plain-text table of `mean±std` per strategy. The best and second-best
/// learned strategies by mean C-index are marked `**` and `*` (all
/// strategies compete when none is learned).
pub fn render_table(records: &[ResultRecord], horizon_months: f64) -> Result<String> {
    let rows = summarize_records(records)?;
    let any_learned = rows.iter().any(|(s, _, _)| s.is_learned());
    let mut ranked: Vec<usize> = (0..rows.len())
        .filter(|&i| !any_learned || rows[i].0.is_learned())
        .collect();
    // stable sort keeps strategy order among equal means
    ranked.sort_by(|&a, &b| rows[b].1.mean.total_cmp(&rows[a].1.mean));
    let mut marks = vec![""; rows.len()];
    for (rank, &i) in ranked.iter().take(2).enumerate() {
        marks[i] = if rank == 0 { "**" } else { "*" };
    }

    let auroc_header = format!("AUROC@{horizon_months}mo");
    let mut out = String::new();
    writeln!(out, "{:<14} {:<13} {:<13}", "strategy", "C-index", auroc_header).unwrap();
    for ((s, c, a), mark) in rows.iter().zip(&marks) {
        let a = a.as_ref().map_or("n/a".to_string(), |a| a.to_string());
        writeln!(out, "{:<14} {:<13} {:<13} {}", s.name(), c.to_string(), a, mark).unwrap();
    }
    let mut text: String = out.lines().map(|l| format!("{}\n", l.trim_end())).collect();
    text.push_str("\n** best, * second best learned strategy by mean C-index\n");
    text.push_str("equal means are ranked by strategy order: ");
    text.push_str(&Strategy::ALL.map(Strategy::name).join(", "));
    text.push('\n');
    for w in ranked.windows(2).take(2) {
        if rows[w[0]].1.mean == rows[w[1]].1.mean {
            writeln!(
                text,
                "tie: {} and {} have equal mean C-index; {} ranked first",
                rows[w[0]].0,
                rows[w[1]].0,
                rows[w[0]].0
            )
            .unwrap();
        }
    }
    Ok(text)
}

/// Writes the results file, the summary table and the provenance metadata
/// into `dir`.
pub fn emit_report(dir: impl AsRef<Path>, results: &[StrategyResult], provenance: &Provenance) -> Result<String> {
    if results.is_empty() {
        return Err(ExperimentError::NoResults);
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let recs = records(results);
    let mut jsonl = String::new();
    for r in &recs {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    fs::write(dir.join(RESULTS_FILE), jsonl)?;
    let table = render_table(&recs, provenance.horizon_months)?;
    fs::write(dir.join(SUMMARY_FILE), &table)?;
    let mut meta = serde_json::to_string_pretty(provenance)?;
    meta.push('\n');
    fs::write(dir.join(METADATA_FILE), meta)?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub patient_id: String,
    pub outer_fold: usize,
    /// Indexed by held-out outer fold; `None` for the patient's own.
    pub inner_fold: Vec<Option<usize>>,
}

/// CSV of `patient_id,outer_fold,inner_fold_0..4` where `inner_fold_k` is
/// the patient's inner fold when outer fold `k` is held out (empty for its
/// own outer fold).
pub fn write_fold_assignments(path: impl AsRef<Path>, cohort: &Cohort, plan: &FoldPlan) -> Result<()> {
    let n_outer = plan.outer.len();
    let mut inner = vec![vec![None; n_outer]; cohort.len()];
    for (f, parts) in plan.inner.iter().enumerate() {
        for (j, part) in parts.iter().enumerate() {
            for &i in part {
                inner[i][f] = Some(j);
            }
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["patient_id".to_string(), "outer_fold".to_string()];
    header.extend((0..n_outer).map(|k| format!("inner_fold_{k}")));
    w.write_record(&header)?;
    for (i, (p, f)) in cohort.patients().iter().zip(plan.outer_assignment()).enumerate() {
        let mut row = vec![p.patient_id.clone(), f.to_string()];
        row.extend(inner[i].iter().map(|j| j.map_or(String::new(), |j| j.to_string())));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_fold_assignments(path: impl AsRef<Path>) -> Result<Vec<FoldAssignment>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |m: String| ExperimentError::MalformedResults { line: line + 2, message: m };
        let id = rec.get(0).ok_or_else(|| bad("missing patient_id".into()))?.to_string();
        let outer = rec
            .get(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("bad outer_fold".into()))?;
        let inner = rec
            .iter()
            .skip(2)
            .map(|v| match v {
                "" => Ok(None),
                v => v.parse().map(Some).map_err(|_| bad(format!("bad inner fold {v:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(FoldAssignment {
            patient_id: id,
            outer_fold: outer,
            inner_fold: inner,
        });
    }
    Ok(out)
}
