use std::collections::{BTreeMap, HashMap};

use survfuse::cohort::{PatientRecord, SurvivalOutcome};
use survfuse::leibovich::{adjusted_leibovich, leibovich_cohort_scores, LeibovichFeatures, NStage, PointTable, TStage};
use survfuse::{c_index, c_index_random_ties, Cohort};

/// `(component, level) -> points` and the size threshold, read straight from
/// the committed fixture.
fn fixture() -> (HashMap<(String, String), u32>, f64) {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/leibovich_adjusted.csv");
    let text = std::fs::read_to_string(path).unwrap();
    let mut points = HashMap::new();
    let mut threshold = None;
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols[0] == "size_threshold_cm" {
            threshold = Some(cols[2].parse().unwrap());
        } else {
            points.insert((cols[0].to_string(), cols[1].to_string()), cols[2].parse().unwrap());
        }
    }
    (points, threshold.unwrap())
}

#[test]
fn exhaustive_sweep_matches_fixture_sum() {
    let (points, threshold) = fixture();
    let table = PointTable::default();
    let pt = |c: &str, l: &str| points[&(c.to_string(), l.to_string())];
    let sizes = [0.1, 4.0, threshold - 1e-9, threshold, threshold + 1e-9, 15.0, 40.0];
    let mut checked = 0;
    for t in TStage::ALL {
        for n in NStage::ALL {
            for &size in &sizes {
                for grade in 1..=4u8 {
                    let f = LeibovichFeatures {
                        t_stage: t,
                        n_stage: n,
                        tumor_size_cm: size,
                        grade,
                    };
                    let size_level = if size >= threshold { "at_or_above" } else { "below" };
                    let want = pt("t_stage", &t.to_string())
                        + pt("n_stage", &n.to_string())
                        + pt("size", size_level)
                        + pt("grade", &grade.to_string());
                    assert_eq!(adjusted_leibovich(&f, &table).unwrap(), want, "{f:?}");
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 5 * 3 * sizes.len() * 4);
}

fn tied_cohort(n: usize) -> Cohort {
    let f = LeibovichFeatures {
        t_stage: TStage::T2,
        n_stage: NStage::N0,
        tumor_size_cm: 6.0,
        grade: 3,
    };
    let patients = (0..n)
        .map(|i| PatientRecord {
            patient_id: format!("p{i}"),
            outcome: SurvivalOutcome::new(5.0 + 3.0 * i as f64, i % 2 == 0).unwrap(),
            embeddings: BTreeMap::new(),
            leibovich: Some(f),
        })
        .collect();
    Cohort::new(patients, BTreeMap::new()).unwrap()
}

#[test]
fn fully_tied_cohort_scores_one_half() {
    let cohort = tied_cohort(30);
    let scores = leibovich_cohort_scores(&cohort, &PointTable::default()).unwrap();
    assert!(scores.scores.windows(2).all(|w| w[0] == w[1]));
    let data = cohort.survival_data();
    assert_eq!(c_index(&data, &scores.scores).unwrap(), 0.5);
    let rt = c_index_random_ties(&data, &scores.scores, 1000, 17).unwrap();
    assert!((rt.mean - 0.5).abs() < 0.02, "{}", rt.mean);
}
