use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use survfuse::cohort::{calibrate_censoring_rate, generate_synthetic_cohort, load_manifest, write_manifest, Cohort, GroundTruth, SyntheticSpec};
use survfuse::experiment::{
    emit_report, make_fold_plan, parse_results, read_fold_assignments, render_table, run_experiment, sha256_hex,
    write_fold_assignments, ExperimentConfig, Provenance, SearchSpec, Strategy, StrategyResult, METHOD_NOTES,
};
use survfuse::leibovich::{leibovich_cohort_scores, PointTable};
use survfuse::metrics::{auroc_horizon, c_index, MetricError};
use survfuse::nn::{read_checkpoint, write_checkpoint, InputLayout};

use crate::config::{LoadedConfig, Seeds};
use crate::error::{CliError, Result};

pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Refuses to reuse an existing output directory unless `force` is set.
fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !force {
            return Err(CliError::Config(format!(
                "output directory {} exists; pass --force to overwrite",
                dir.display()
            )));
        }
        let ckpt = dir.join(CHECKPOINT_DIR);
        if ckpt.exists() {
            fs::remove_dir_all(ckpt)?;
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn load_point_table(path: Option<&Path>) -> Result<PointTable> {
    Ok(match path {
        Some(p) => PointTable::from_path(p)?,
        None => PointTable::default(),
    })
}

#[derive(Serialize)]
struct GroundTruthFile<'a> {
    spec: &'a SyntheticSpec,
    ground_truth: &'a GroundTruth,
}

pub fn cmd_synth(cfg: &LoadedConfig, force: bool) -> Result<String> {
    let (mut spec, target) = cfg.synthetic_spec()?;
    if let Some(t) = target {
        spec.censoring_rate = calibrate_censoring_rate(&spec, t)?;
    }
    let (cohort, truth) = generate_synthetic_cohort(&spec)?;
    let out = cfg.output_dir();
    prepare_output_dir(&out, force)?;
    let manifest = write_manifest(&cohort, &out)?;
    let mut gt = serde_json::to_string_pretty(&GroundTruthFile {
        spec: &spec,
        ground_truth: &truth,
    })?;
    gt.push('\n');
    fs::write(out.join("ground_truth.json"), gt)?;
    Ok(format!(
        "wrote {} patients ({} events) to {}\n",
        cohort.len(),
        cohort.survival_data().n_events(),
        manifest.display()
    ))
}

/// Everything that determines a run's numbers, as recorded in its metadata.
#[derive(Serialize)]
struct ResolvedRun<'a> {
    seed: u64,
    seeds: Seeds,
    manifest: &'a Path,
    point_table: Option<&'a Path>,
    strategies: &'a [Strategy],
    horizon_months: f64,
    tie_repeats: usize,
    search: SearchSpec,
}

fn checkpoint_name(strategy: Strategy, fold: usize, model: &str, n_models: usize) -> String {
    if n_models == 1 {
        format!("{strategy}_fold{fold}.cxmp")
    } else {
        format!("{strategy}_fold{fold}_{model}.cxmp")
    }
}

fn write_predictions(path: &Path, cohort: &Cohort, results: &[StrategyResult]) -> Result<()> {
    let index: HashMap<&str, usize> = cohort.ids().into_iter().enumerate().map(|(i, id)| (id, i)).collect();
    let mut out = String::from("strategy,fold,patient_id,time_months,event,prediction\n");
    for r in results {
        for f in &r.folds {
            for (id, p) in f.test_ids.iter().zip(&f.test_predictions) {
                let o = cohort.patients()[index[id.as_str()]].outcome;
                writeln!(out, "{},{},{},{},{},{}", r.strategy, f.fold, id, o.time_months, u8::from(o.event), p).unwrap();
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn cmd_run(cfg: &LoadedConfig, force: bool, horizon_flag: Option<f64>) -> Result<String> {
    let section = cfg.cohort()?;
    let strategies = cfg.strategies()?;
    let horizon = cfg.horizon(horizon_flag)?;
    let search = cfg.search_spec()?;
    let tie_repeats = cfg.tie_repeats()?;
    let seeds = cfg.seeds();
    let table_path = section.point_table.as_ref().map(|p| cfg.resolve(p));
    let point_table = load_point_table(table_path.as_deref())?;
    let cohort = load_manifest(cfg.resolve(&section.manifest))?;
    let plan = make_fold_plan(&cohort.survival_data(), seeds.fold_plan)?;
    let exp = ExperimentConfig {
        search,
        horizon_months: horizon,
        tie_repeats,
        tie_seed: seeds.tie_break,
        point_table,
    };

    let out = cfg.output_dir();
    prepare_output_dir(&out, force)?;
    let results = run_experiment(&cohort, &strategies, &plan, &exp)?;

    let resolved = ResolvedRun {
        seed: cfg.config.seed,
        seeds,
        manifest: &section.manifest,
        point_table: section.point_table.as_deref(),
        strategies: &strategies,
        horizon_months: horizon,
        tie_repeats,
        search,
    };
    let config = serde_json::to_value(&resolved)?;
    let provenance = Provenance {
        master_seed: cfg.config.seed,
        seeds: BTreeMap::from([
            ("fold_plan".to_string(), seeds.fold_plan),
            ("search".to_string(), seeds.search),
            ("tie_break".to_string(), seeds.tie_break),
        ]),
        config_sha256: sha256_hex(&serde_json::to_vec(&config)?),
        config,
        cohort_sha256: cohort.content_sha256(),
        fold_plan_sha256: plan.sha256(),
        point_table_sha256: exp.point_table.sha256(),
        horizon_months: horizon,
        notes: METHOD_NOTES.iter().map(|s| s.to_string()).collect(),
    };
    let table = emit_report(&out, &results, &provenance)?;
    write_fold_assignments(out.join("folds.csv"), &cohort, &plan)?;
    write_predictions(&out.join("predictions.csv"), &cohort, &results)?;
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    for r in &results {
        for f in &r.folds {
            if !f.models.is_empty() {
                fs::create_dir_all(&ckpt_dir)?;
            }
            for (model, ckpt) in &f.models {
                write_checkpoint(ckpt, ckpt_dir.join(checkpoint_name(r.strategy, f.fold, model, f.models.len())))?;
            }
        }
    }
    Ok(table)
}

#[derive(Serialize)]
struct EvalOutput {
    checkpoint: String,
    modalities: Vec<String>,
    fold: Option<usize>,
    n_patients: usize,
    n_events: usize,
    c_index: f64,
    auroc: Option<f64>,
    horizon_months: f64,
}

fn optional_auroc(r: std::result::Result<f64, MetricError>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(MetricError::NoPositives | MetricError::NoNegatives) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn cmd_eval(
    checkpoint: &Path,
    manifest: &Path,
    folds: Option<(&Path, usize)>,
    horizon: f64,
) -> Result<String> {
    let ckpt = read_checkpoint(checkpoint)?;
    let cohort = load_manifest(manifest)?;
    let mut dims = Vec::new();
    for m in &ckpt.modalities {
        let d = cohort
            .modality_dim(m)
            .ok_or_else(|| CliError::DimMismatch(format!("cohort has no {m:?} embeddings required by the checkpoint")))?;
        dims.push(d);
    }
    let total: usize = dims.iter().sum();
    if total != ckpt.net.input_dim() {
        return Err(CliError::DimMismatch(format!(
            "checkpoint expects {} input features, cohort provides {total}",
            ckpt.net.input_dim()
        )));
    }
    if let InputLayout::ProjectCt { wsi_dim } = ckpt.net.layout() {
        if dims.first() != Some(&wsi_dim) {
            return Err(CliError::DimMismatch(format!(
                "checkpoint expects a {wsi_dim}-wide first block, cohort provides {:?}",
                dims.first()
            )));
        }
    }

    let indices: Vec<usize> = match folds {
        None => (0..cohort.len()).collect(),
        Some((path, fold)) => {
            let index: HashMap<&str, usize> = cohort.ids().into_iter().enumerate().map(|(i, id)| (id, i)).collect();
            let mut idx = Vec::new();
            for a in read_fold_assignments(path)?.into_iter().filter(|a| a.outer_fold == fold) {
                let i = index.get(a.patient_id.as_str()).ok_or_else(|| {
                    CliError::Config(format!("fold file patient {:?} is not in the cohort", a.patient_id))
                })?;
                idx.push(*i);
            }
            if idx.is_empty() {
                return Err(CliError::Config(format!("fold {fold} has no patients in {}", path.display())));
            }
            idx
        }
    };
    let mods: Vec<&str> = ckpt.modalities.iter().map(String::as_str).collect();
    let x = cohort.features(&mods, &indices)?;
    let eta = ckpt.net.predict(x.view())?;
    let data = cohort.survival_data().subset(&indices);
    let out = EvalOutput {
        checkpoint: checkpoint.display().to_string(),
        modalities: ckpt.modalities.clone(),
        fold: folds.map(|(_, f)| f),
        n_patients: data.len(),
        n_events: data.n_events(),
        c_index: c_index(&data, &eta)?,
        auroc: optional_auroc(auroc_horizon(&data, &eta, horizon))?,
        horizon_months: horizon,
    };
    Ok(serde_json::to_string_pretty(&out)? + "\n")
}

#[derive(Serialize)]
struct PatientScore {
    patient_id: String,
    score: u32,
}

#[derive(Serialize)]
struct LeibovichOutput {
    point_table_sha256: String,
    n_scored: usize,
    missing: Vec<String>,
    distribution: BTreeMap<u32, usize>,
    c_index: Option<f64>,
    auroc: Option<f64>,
    horizon_months: f64,
    scores: Vec<PatientScore>,
}

pub fn cmd_leibovich(manifest: &Path, point_table: Option<&Path>, csv_out: Option<&Path>, horizon: f64) -> Result<String> {
    let table = load_point_table(point_table)?;
    let cohort = load_manifest(manifest)?;
    let scored = leibovich_cohort_scores(&cohort, &table)?;
    let data = cohort.survival_data().subset(&scored.indices);
    let c = match c_index(&data, &scored.scores) {
        Ok(v) => Some(v),
        Err(MetricError::NoComparablePairs) => None,
        Err(e) => return Err(e.into()),
    };
    let auroc = if data.is_empty() {
        None
    } else {
        optional_auroc(auroc_horizon(&data, &scored.scores, horizon))?
    };
    let scores: Vec<PatientScore> = scored
        .indices
        .iter()
        .zip(&scored.scores)
        .map(|(&i, &s)| PatientScore {
            patient_id: cohort.patients()[i].patient_id.clone(),
            score: s as u32,
        })
        .collect();
    if let Some(path) = csv_out {
        let mut text = String::from("patient_id,time_months,event,score\n");
        for (&i, s) in scored.indices.iter().zip(&scores) {
            let o = cohort.patients()[i].outcome;
            writeln!(text, "{},{},{},{}", s.patient_id, o.time_months, u8::from(o.event), s.score).unwrap();
        }
        fs::write(path, text)?;
    }
    let out = LeibovichOutput {
        point_table_sha256: table.sha256(),
        n_scored: scores.len(),
        missing: scored.missing.clone(),
        distribution: scored.distribution.clone(),
        c_index: c,
        auroc,
        horizon_months: horizon,
        scores,
    };
    Ok(serde_json::to_string_pretty(&out)? + "\n")
}

pub fn cmd_report(results: &PathBuf, horizon: f64) -> Result<String> {
    let text = fs::read_to_string(results).map_err(|e| CliError::Io(format!("{}: {e}", results.display())))?;
    let records = parse_results(&text)?;
    if records.is_empty() {
        return Err(CliError::Config(format!("{} holds no records", results.display())));
    }
    Ok(render_table(&records, horizon)?)
}
