//! CSV cohort manifests. Embedding file paths are resolved relative to the
//! manifest's directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::femb::{read_embeddings, write_embeddings};
use super::{Cohort, CohortError, EmbeddingMatrix, PatientRecord, Result, SurvivalOutcome, CT, WSI};
use crate::leibovich::{LeibovichFeatures, NStage, TStage};

pub const MANIFEST_HEADER: [&str; 11] = [
    "patient_id",
    "time_months",
    "event",
    "wsi_file",
    "wsi_row",
    "ct_file",
    "ct_row",
    "t_stage",
    "n_stage",
    "tumor_size_cm",
    "grade",
];

const MODALITY_COLUMNS: [(&str, usize, usize); 2] = [(WSI, 3, 4), (CT, 5, 6)];

fn malformed(row: usize, message: impl Into<String>) -> CohortError {
    CohortError::MalformedRow {
        row,
        message: message.into(),
    }
}

struct Builder {
    dim: Option<usize>,
    values: Vec<f32>,
    n_rows: usize,
}

pub fn load_manifest(manifest_path: impl AsRef<Path>) -> Result<Cohort> {
    let manifest_path = manifest_path.as_ref();
    if !manifest_path.exists() {
        return Err(CohortError::MissingFile(manifest_path.to_path_buf()));
    }
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(manifest_path)?;

    let header = reader.headers()?.clone();
    if header.iter().ne(MANIFEST_HEADER.iter().copied()) {
        return Err(malformed(0, format!("expected header {}", MANIFEST_HEADER.join(","))));
    }

    let mut files: HashMap<PathBuf, EmbeddingMatrix> = HashMap::new();
    let mut builders: BTreeMap<&str, Builder> = BTreeMap::new();
    let mut patients = Vec::new();
    let mut ids = HashSet::new();

    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| malformed(row, e.to_string()))?;
        if rec.len() != MANIFEST_HEADER.len() {
            return Err(malformed(row, format!("expected {} fields, got {}", MANIFEST_HEADER.len(), rec.len())));
        }
        let patient_id = rec[0].to_string();
        if patient_id.is_empty() {
            return Err(malformed(row, "empty patient_id"));
        }
        if !ids.insert(patient_id.clone()) {
            return Err(CohortError::DuplicatePatientId(patient_id));
        }
        let time: f64 = rec[1]
            .parse()
            .map_err(|_| malformed(row, format!("bad time_months {:?}", &rec[1])))?;
        let event = match &rec[2] {
            "0" => false,
            "1" => true,
            other => return Err(malformed(row, format!("event must be 0 or 1, got {other:?}"))),
        };
        let outcome = SurvivalOutcome::new(time, event).map_err(|e| malformed(row, e.to_string()))?;

        let mut embeddings = BTreeMap::new();
        for (modality, file_col, row_col) in MODALITY_COLUMNS {
            let file = &rec[file_col];
            if file.is_empty() {
                continue;
            }
            let src_row: usize = rec[row_col]
                .parse()
                .map_err(|_| malformed(row, format!("bad {modality}_row {:?}", &rec[row_col])))?;
            let path = base.join(file);
            if !files.contains_key(&path) {
                if !path.exists() {
                    return Err(CohortError::MissingFile(path));
                }
                let m = read_embeddings(&path)?;
                files.insert(path.clone(), m);
            }
            let m = &files[&path];
            if src_row >= m.n_rows() {
                return Err(malformed(
                    row,
                    format!("{modality}_row {src_row} out of bounds for {} ({} rows)", path.display(), m.n_rows()),
                ));
            }
            let b = builders.entry(modality).or_insert(Builder {
                dim: None,
                values: Vec::new(),
                n_rows: 0,
            });
            match b.dim {
                Some(d) if d != m.dim() => {
                    return Err(CohortError::DimensionMismatch {
                        modality: modality.to_string(),
                        expected: d,
                        actual: m.dim(),
                    })
                }
                _ => b.dim = Some(m.dim()),
            }
            b.values.extend_from_slice(m.row(src_row));
            embeddings.insert(modality.to_string(), b.n_rows);
            b.n_rows += 1;
        }

        let leibovich = parse_leibovich(&rec, row)?;
        patients.push(PatientRecord {
            patient_id,
            outcome,
            embeddings,
            leibovich,
        });
    }

    if patients.is_empty() {
        return Err(malformed(0, "empty cohort"));
    }

    let mut matrices = BTreeMap::new();
    for (modality, b) in builders {
        let m = EmbeddingMatrix::new(modality, b.n_rows, b.dim.unwrap_or(1), b.values)?;
        matrices.insert(modality.to_string(), m);
    }
    Cohort::new(patients, matrices)
}

fn parse_leibovich(rec: &csv::StringRecord, row: usize) -> Result<Option<LeibovichFeatures>> {
    let cols = [&rec[7], &rec[8], &rec[9], &rec[10]];
    if cols.iter().any(|c| c.is_empty()) {
        return Ok(None);
    }
    let t_stage: TStage = cols[0].parse().map_err(|e: String| malformed(row, e))?;
    let n_stage: NStage = cols[1].parse().map_err(|e: String| malformed(row, e))?;
    let size: f64 = cols[2]
        .parse()
        .map_err(|_| malformed(row, format!("bad tumor_size_cm {:?}", cols[2])))?;
    if !(size.is_finite() && size > 0.0) {
        return Err(malformed(row, format!("tumor_size_cm must be positive, got {size}")));
    }
    let grade: u8 = cols[3]
        .parse()
        .map_err(|_| malformed(row, format!("bad grade {:?}", cols[3])))?;
    if !(1..=4).contains(&grade) {
        return Err(malformed(row, format!("grade must be in 1..=4, got {grade}")));
    }
    Ok(Some(LeibovichFeatures {
        t_stage,
        n_stage,
        tumor_size_cm: size,
        grade,
    }))
}

/// Writes `cohort` as `dir/manifest.csv` plus one `dir/<modality>.femb` per
/// modality. Returns the manifest path.
pub fn write_manifest(cohort: &Cohort, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (modality, m) in cohort.matrices() {
        write_embeddings(m, dir.join(format!("{modality}.femb")))?;
    }
    let path = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(MANIFEST_HEADER)?;
    for p in cohort.patients() {
        let mut fields: Vec<String> = vec![
            p.patient_id.clone(),
            format!("{}", p.outcome.time_months),
            if p.outcome.event { "1" } else { "0" }.to_string(),
        ];
        for (modality, _, _) in MODALITY_COLUMNS {
            match p.embeddings.get(modality) {
                Some(row) => {
                    fields.push(format!("{modality}.femb"));
                    fields.push(row.to_string());
                }
                None => fields.extend([String::new(), String::new()]),
            }
        }
        match &p.leibovich {
            Some(f) => fields.extend([
                f.t_stage.to_string(),
                f.n_stage.to_string(),
                format!("{}", f.tumor_size_cm),
                f.grade.to_string(),
            ]),
            None => fields.extend(std::iter::repeat_n(String::new(), 4)),
        }
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(path)
}
