//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{oracle, two_modality_spec};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survfuse::cohort::{
    calibrate_censoring_rate, generate_synthetic_cohort, read_embeddings, write_embeddings, Cohort, EmbeddingMatrix,
    GroundTruth, PatientRecord, SurvivalOutcome, SyntheticSpec,
};
use survfuse::cox::{cox_loss, cox_loss_grad};
use survfuse::experiment::{
    emit_report, make_fold_plan, parse_results, run_experiment, verify_no_leakage, ExperimentConfig, FoldPlan,
    Provenance, SearchSpec, Strategy, StrategyResult, METHOD_NOTES, RESULTS_FILE,
};
use survfuse::leibovich::{
    adjusted_leibovich, leibovich_cohort_scores, LeibovichFeatures, NStage, PointTable, TStage,
};
use survfuse::nn::{
    batch_objective, decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint,
    InputLayout, MlpConfig, Mode, RiskNet,
};
use survfuse::{auroc_horizon, c_index, c_index_random_ties, SurvivalData};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($msg)+)),
        }
    };
}

fn random_instance(rng: &mut ChaCha8Rng, max_n: usize, levels: u8) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(1..=max_n);
    let t = (0..n).map(|_| f64::from(rng.random_range(1..=levels))).collect();
    let mut e: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
    let k = rng.random_range(0..n);
    e[k] = true;
    (t, e)
}

fn data(t: &[f64], e: &[bool]) -> SurvivalData {
    SurvivalData::new(t.to_vec(), e.to_vec()).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-8 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn flat(net: &RiskNet) -> Vec<f64> {
    net.tensors().into_iter().flat_map(|(_, t)| t.to_vec()).collect()
}

fn perturbed(net: &RiskNet, k: usize, delta: f64) -> RiskNet {
    let mut out = net.clone();
    let mut offset = 0;
    for (_, t) in out.tensors_mut() {
        if k < offset + t.len() {
            t[k - offset] += delta;
            break;
        }
        offset += t.len();
    }
    out
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-5;
    let mut worst_cox = 0.0f64;
    for _ in 0..100 {
        let (t, e) = random_instance(&mut rng, 20, 6);
        let d = data(&t, &e);
        let eta: Vec<f64> = (0..t.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let analytic = cox_loss_grad(&eta, &d).unwrap();
        let numeric: Vec<f64> = (0..eta.len())
            .map(|k| {
                let (mut up, mut dn) = (eta.clone(), eta.clone());
                up[k] += h;
                dn[k] -= h;
                (cox_loss(&up, &d).unwrap() - cox_loss(&dn, &d).unwrap()) / (2.0 * h)
            })
            .collect();
        worst_cox = worst_cox.max(rel_err(&analytic, &numeric));
    }
    let mut worst_net = 0.0f64;
    for case in 0..100 {
        let (t, e) = random_instance(&mut rng, 20, 6);
        let d = data(&t, &e);
        let (layout, dim) = if case % 2 == 0 {
            let dim = rng.random_range(1..=5);
            (InputLayout::Direct, dim)
        } else {
            let wsi = rng.random_range(1..=3);
            (InputLayout::ProjectCt { wsi_dim: wsi }, wsi + rng.random_range(1..=3))
        };
        let cfg = MlpConfig {
            input_dim: dim,
            hidden_dim: 32,
            dropout: 0.0,
            seed: rng.random(),
        };
        let mut net = RiskNet::init(&cfg, layout).unwrap();
        for (_, p) in net.tensors_mut() {
            p.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let x = Array2::from_shape_fn((t.len(), dim), |_| rng.random_range(-2.0..2.0));
        let l1 = 1e-3;
        let objective = |n: &RiskNet| batch_objective(n, x.view(), &d, l1, Mode::Eval).unwrap().0;
        let analytic = flat(&batch_objective(&net, x.view(), &d, l1, Mode::Eval).unwrap().1);
        let numeric: Vec<f64> = (0..analytic.len())
            .map(|k| (objective(&perturbed(&net, k, h)) - objective(&perturbed(&net, k, -h))) / (2.0 * h))
            .collect();
        worst_net = worst_net.max(rel_err(&analytic, &numeric));
    }
    ensure!(worst_cox < 1e-5 && worst_net < 1e-5, "max relative error: cox {worst_cox:.2e}, model {worst_net:.2e}");
    Ok(format!("100 Cox + 100 full-model instances, max rel. error {worst_cox:.1e} / {worst_net:.1e}"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut c_checked, mut a_checked) = (0, 0);
    for _ in 0..200 {
        let n = rng.random_range(2..=50);
        let t: Vec<f64> = (0..n).map(|_| 6.0 * f64::from(rng.random_range(1..=20u8))).collect();
        let e: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let eta: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..6u8))).collect();
        let d = data(&t, &e);
        if let Some(want) = oracle::c_index(&eta, &t, &e) {
            let got = c_index(&d, &eta).unwrap();
            ensure!(got == want, "c_index {got} vs oracle {want}");
            c_checked += 1;
        }
        if let Some(want) = oracle::auroc(&eta, &t, &e, 60.0) {
            let got = auroc_horizon(&d, &eta, 60.0).unwrap();
            ensure!(got == want, "auroc {got} vs oracle {want}");
            a_checked += 1;
        }
    }
    ensure!(c_checked >= 100 && a_checked >= 100, "too few defined instances: {c_checked}, {a_checked}");
    Ok(format!("exact on {c_checked} C-index and {a_checked} AUROC instances"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut shift, mut zero_sum) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let (t, e) = random_instance(&mut rng, 20, 6);
        let d = data(&t, &e);
        let eta: Vec<f64> = (0..t.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let c = rng.random_range(-50.0..=50.0);
        let moved: Vec<f64> = eta.iter().map(|v| v + c).collect();
        shift = shift.max((cox_loss(&eta, &d).unwrap() - cox_loss(&moved, &d).unwrap()).abs());
        zero_sum = zero_sum.max(cox_loss_grad(&eta, &d).unwrap().iter().sum::<f64>().abs());

        let eta: Vec<f64> = eta.iter().map(|v| (v * 2.0).round() / 2.0).collect();
        if let Ok(base) = c_index(&d, &eta) {
            let neg: Vec<f64> = eta.iter().map(|v| -v).collect();
            ensure!(base + c_index(&d, &neg).unwrap() == 1.0, "complement symmetry broken");
            for g in [|v: f64| v.exp(), |v: f64| 3.0 * v - 7.0, |v: f64| v * v * v + v] {
                let mapped: Vec<f64> = eta.iter().map(|&v| g(v)).collect();
                ensure!(c_index(&d, &mapped).unwrap() == base, "monotone transform changed the C-index");
            }
        }
    }
    ensure!(shift <= 1e-10 && zero_sum <= 1e-10, "shift {shift:.2e}, zero-sum {zero_sum:.2e}");
    Ok(format!("shift ≤ {shift:.1e}, |Σ grad| ≤ {zero_sum:.1e}, symmetry and monotone invariance exact"))
}

fn criterion_4() -> Outcome {
    let n = 40;
    let t: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
    let e: Vec<bool> = (0..n).map(|i| i % 3 != 2).collect();
    let tied = vec![1.0; n];
    let all_tied = c_index_random_ties(&data(&t, &e), &tied, 1000, 41).unwrap().mean;
    ensure!((all_tied - 0.5).abs() < 0.02, "all-tied mean {all_tied}");

    // two-level score, informative ties: high level mostly on early events
    let t = [2.0, 3.0, 5.0, 7.0, 8.0, 11.0, 13.0, 17.0];
    let e = [true, true, false, true, true, false, true, false];
    let eta = [1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0];
    let d = data(&t, &e);
    let exact = oracle::expected_c_index_random_ties(&eta, &t, &e);
    let mc = c_index_random_ties(&d, &eta, 1000, 43).unwrap().mean;
    let as_half = c_index(&d, &eta).unwrap();
    ensure!((mc - exact).abs() < 0.01, "mean {mc} vs enumerated {exact}");
    Ok(format!(
        "all-tied mean {all_tied:.4}; 8-patient mean {mc:.4} vs enumerated {exact:.4} (ties-as-half {as_half:.4})"
    ))
}

fn calibrated(mut spec: SyntheticSpec, events: f64) -> (Cohort, GroundTruth) {
    spec.censoring_rate = calibrate_censoring_rate(&spec, events).unwrap();
    generate_synthetic_cohort(&spec).unwrap()
}

fn search_config(budget: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        search: SearchSpec {
            budget,
            seed,
            ..SearchSpec::default()
        },
        tie_repeats: 200,
        tie_seed: seed ^ 0x5eed,
        ..ExperimentConfig::default()
    }
}

fn mean_true_risk_c_index(cohort: &Cohort, truth: &GroundTruth, plan: &FoldPlan) -> f64 {
    let d = cohort.survival_data();
    let per_fold: Vec<f64> = (0..plan.outer.len())
        .map(|f| {
            let idx = plan.test_indices(f);
            let r: Vec<f64> = idx.iter().map(|&i| truth.risks[i]).collect();
            c_index(&d.subset(idx), &r).unwrap()
        })
        .collect();
    per_fold.iter().sum::<f64>() / per_fold.len() as f64
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let spec = two_modality_spec(400, vec![1.2, -1.0, 0.8, -0.6], vec![], 1.0, 505);
    let (cohort, truth) = calibrated(spec, 0.25);
    let d = cohort.survival_data();
    let plan = make_fold_plan(&d, 55).unwrap();
    let result = run_experiment(&cohort, &[Strategy::UnimodalWsi], &plan, &search_config(50, 5)).unwrap();
    let learned = result[0].c_index.mean;
    let oracle = mean_true_risk_c_index(&cohort, &truth, &plan);
    let elapsed = start.elapsed();
    ensure!(
        (oracle - learned).abs() <= 0.10 && elapsed < Duration::from_secs(600),
        "learned {learned:.4} vs true-risk {oracle:.4} in {elapsed:.0?}"
    );
    Ok(format!(
        "{} events / 400; learned {learned:.4} vs true-risk {oracle:.4} (gap {:.4}), budget 50, {elapsed:.0?}",
        d.n_events(),
        oracle - learned
    ))
}

fn criterion_6() -> Outcome {
    let spec = two_modality_spec(400, vec![1.0, -0.8, 0.6, -0.5], vec![0.9, -0.7], 1.0, 606);
    let (cohort, _) = calibrated(spec, 0.25);
    let plan = make_fold_plan(&cohort.survival_data(), 66).unwrap();
    let strategies = [Strategy::UnimodalWsi, Strategy::UnimodalCt, Strategy::Late, Strategy::Intermediate];
    let results = run_experiment(&cohort, &strategies, &plan, &search_config(10, 6)).unwrap();
    let mean = |s: Strategy| results.iter().find(|r| r.strategy == s).unwrap().c_index.mean;
    let (wsi, ct, inter) = (mean(Strategy::UnimodalWsi), mean(Strategy::UnimodalCt), mean(Strategy::Intermediate));
    let alphas: Vec<f64> = results
        .iter()
        .find(|r| r.strategy == Strategy::Late)
        .unwrap()
        .folds
        .iter()
        .map(|f| f.alpha.unwrap())
        .collect();
    let alpha_text = alphas.iter().map(|a| format!("{a:.2}")).collect::<Vec<_>>().join(",");
    ensure!(
        inter >= wsi + 0.03 && inter >= ct + 0.03 && alphas.iter().all(|&a| a > 0.0 && a < 1.0),
        "intermediate {inter:.4}, wsi {wsi:.4}, ct {ct:.4}, alpha [{alpha_text}]"
    );
    Ok(format!(
        "intermediate {inter:.4} vs wsi {wsi:.4} / ct {ct:.4}, late {:.4}, alpha [{alpha_text}], budget 10",
        mean(Strategy::Late)
    ))
}

fn provenance() -> Provenance {
    Provenance {
        master_seed: 7,
        seeds: Default::default(),
        config: serde_json::json!({ "budget": 3 }),
        config_sha256: String::new(),
        cohort_sha256: String::new(),
        fold_plan_sha256: String::new(),
        point_table_sha256: String::new(),
        horizon_months: 60.0,
        notes: METHOD_NOTES.iter().map(|s| s.to_string()).collect(),
    }
}

struct Protocol {
    cohort: Cohort,
    results: Vec<StrategyResult>,
    files: Vec<Vec<u8>>,
}

/// Full run of every strategy inside a pool of `threads`, with its emitted
/// report files and encoded checkpoints.
fn protocol_run(threads: usize) -> Protocol {
    let spec = SyntheticSpec {
        clinical_beta: 0.8,
        ..two_modality_spec(120, vec![1.0, -0.8], vec![0.7], 1.0, 707)
    };
    let (cohort, _) = generate_synthetic_cohort(&spec).unwrap();
    let plan = make_fold_plan(&cohort.survival_data(), 77).unwrap();
    let mut cfg = search_config(3, 7);
    cfg.search.max_epochs = 15;
    cfg.search.patience = 4;
    cfg.search.warmup_epochs = 2;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let results = pool.install(|| run_experiment(&cohort, &Strategy::ALL, &plan, &cfg)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(dir.path(), &results, &provenance()).unwrap();
    let mut files: Vec<Vec<u8>> = ["results.jsonl", "summary.txt", "metadata.json"]
        .iter()
        .map(|f| fs::read(dir.path().join(f)).unwrap())
        .collect();
    for r in &results {
        for f in &r.folds {
            files.extend(f.models.values().map(encode_checkpoint));
        }
    }
    Protocol { cohort, results, files }
}

fn criterion_7(one: &Protocol, eight: &Protocol) -> Outcome {
    let mut checked = 0;
    for r in &one.results {
        for f in &r.folds {
            verify_no_leakage(f).map_err(|e| e.to_string())?;
            let test: BTreeSet<&String> = f.test_ids.iter().collect();
            ensure!(f.train_ids.iter().all(|id| !test.contains(id)), "{} fold {}: overlap", r.strategy, f.fold);
            checked += 1;
        }
    }
    ensure!(one.files.len() == eight.files.len(), "different artifact counts");
    let differing = one.files.iter().zip(&eight.files).filter(|(a, b)| a != b).count();
    ensure!(differing == 0 && one.results == eight.results, "{differing} artifacts differ between 1 and 8 threads");
    Ok(format!(
        "{checked} strategy-folds leak-free; {} artifacts byte-identical across 1 and 8 threads",
        one.files.len()
    ))
}

fn fixture_points() -> (Vec<(String, String, u32)>, f64) {
    let text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/data/leibovich_adjusted.csv")).unwrap();
    let mut rows = Vec::new();
    let mut threshold = f64::NAN;
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let c: Vec<&str> = line.split(',').map(str::trim).collect();
        if c[0] == "size_threshold_cm" {
            threshold = c[2].parse().unwrap();
        } else {
            rows.push((c[0].to_string(), c[1].to_string(), c[2].parse().unwrap()));
        }
    }
    (rows, threshold)
}

fn criterion_8() -> Outcome {
    let (rows, threshold) = fixture_points();
    let lookup = |comp: &str, level: &str| {
        rows.iter().find(|r| r.0 == comp && r.1 == level).map(|r| r.2).expect("fixture level")
    };
    let table = PointTable::default();
    let mut combos = 0;
    for t in TStage::ALL {
        for n in NStage::ALL {
            for size in [1.0, threshold - 0.01, threshold, 20.0] {
                for grade in 1..=4u8 {
                    let f = LeibovichFeatures {
                        t_stage: t,
                        n_stage: n,
                        tumor_size_cm: size,
                        grade,
                    };
                    let size_level = if size >= threshold { "at_or_above" } else { "below" };
                    let want = lookup("t_stage", &t.to_string())
                        + lookup("n_stage", &n.to_string())
                        + lookup("size", size_level)
                        + lookup("grade", &grade.to_string());
                    let got = adjusted_leibovich(&f, &table).map_err(|e| e.to_string())?;
                    ensure!(got == want, "{f:?}: {got} vs fixture {want}");
                    combos += 1;
                }
            }
        }
    }
    let f = LeibovichFeatures {
        t_stage: TStage::T3,
        n_stage: NStage::Nx,
        tumor_size_cm: 7.5,
        grade: 2,
    };
    let patients = (0..25)
        .map(|i| PatientRecord {
            patient_id: format!("p{i}"),
            outcome: SurvivalOutcome::new(3.0 + 2.0 * i as f64, i % 3 != 0).unwrap(),
            embeddings: Default::default(),
            leibovich: Some(f),
        })
        .collect();
    let cohort = Cohort::new(patients, Default::default()).unwrap();
    let scores = leibovich_cohort_scores(&cohort, &table).unwrap();
    let tied = c_index(&cohort.survival_data(), &scores.scores).unwrap();
    ensure!(tied == 0.5, "tied cohort C-index {tied}");
    Ok(format!("{combos} feature combinations match the fixture; tied cohort C-index {tied}"))
}

fn criterion_9(run: &Protocol) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let values: Vec<f32> = (0..7 * 5).map(|_| rng.random_range(-1e3f32..1e3)).collect();
    let m = EmbeddingMatrix::new("wsi", 7, 5, values).unwrap();
    let (p, q) = (dir.path().join("wsi.femb"), dir.path().join("copy.femb"));
    write_embeddings(&m, &p).unwrap();
    let back = read_embeddings(&p).unwrap();
    write_embeddings(&back, &q).unwrap();
    let bits = |m: &EmbeddingMatrix| m.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure!(bits(&back) == bits(&m) && fs::read(&p).unwrap() == fs::read(&q).unwrap(), "femb round trip differs");

    let mut n_ckpt = 0;
    for r in &run.results {
        for f in &r.folds {
            for ckpt in f.models.values() {
                let path = dir.path().join("m.cxmp");
                write_checkpoint(ckpt, &path).unwrap();
                let back: Checkpoint = read_checkpoint(&path).unwrap();
                ensure!(flat(&back.net).iter().map(|v| v.to_bits()).eq(flat(&ckpt.net).iter().map(|v| v.to_bits())), "checkpoint parameters differ");
                ensure!(back == *ckpt && encode_checkpoint(&back) == fs::read(&path).unwrap(), "checkpoint bytes differ");
                ensure!(decode_checkpoint(&encode_checkpoint(ckpt)).unwrap() == *ckpt, "decode differs");
                n_ckpt += 1;
            }
        }
    }

    emit_report(dir.path(), &run.results, &provenance()).unwrap();
    let parsed = parse_results(&fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap()).unwrap();
    let flat_folds: Vec<_> = run.results.iter().flat_map(|r| r.folds.iter().map(move |f| (r.strategy, f))).collect();
    ensure!(parsed.len() == flat_folds.len(), "record count {}", parsed.len());
    for (rec, (s, f)) in parsed.iter().zip(&flat_folds) {
        ensure!(
            rec.strategy == *s
                && rec.fold == f.fold
                && rec.c_index.to_bits() == f.c_index.to_bits()
                && rec.auroc.map(f64::to_bits) == f.auroc.map(f64::to_bits)
                && rec.alpha.map(f64::to_bits) == f.alpha.map(f64::to_bits)
                && rec.epochs == f.epochs
                && rec.seeds == f.seeds,
            "{s} fold {}: parsed record differs",
            f.fold
        );
    }
    ensure!(run.cohort.len() == 120, "unexpected cohort");
    Ok(format!("femb bit-exact; {n_ckpt} checkpoints bit-exact; {} result records parse back identically", parsed.len()))
}

fn run(label: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(detail) => println!("PASS {label}: {detail} [{secs:.1}s]"),
        Err(detail) => println!("FAIL {label}: {detail} [{secs:.1}s]"),
    }
    outcome.is_ok()
}

fn main() {
    let mut ok = true;
    ok &= run("criterion 1 (gradient correctness)", criterion_1);
    ok &= run("criterion 2 (metric oracle equivalence)", criterion_2);
    ok &= run("criterion 3 (invariance suite)", criterion_3);
    ok &= run("criterion 4 (randomized tie-breaking)", criterion_4);
    ok &= run("criterion 5 (synthetic recovery)", criterion_5);
    ok &= run("criterion 6 (fusion benefit)", criterion_6);
    let runs = catch_unwind(|| (protocol_run(1), protocol_run(8)));
    match &runs {
        Ok((one, eight)) => {
            ok &= run("criterion 7 (protocol integrity)", || criterion_7(one, eight));
            ok &= run("criterion 8 (leibovich calculator)", criterion_8);
            ok &= run("criterion 9 (format round-trips)", || criterion_9(one));
        }
        Err(_) => {
            ok &= run("criterion 7 (protocol integrity)", || Err("protocol run panicked".into()));
            ok &= run("criterion 8 (leibovich calculator)", criterion_8);
            ok &= run("criterion 9 (format round-trips)", || Err("protocol run panicked".into()));
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
