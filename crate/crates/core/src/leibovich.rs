//! Adjusted Leibovich score: the additive pathology point score with the
//! necrosis component removed. Point assignments are data, loaded from a
//! `component,level,points` table with a `size_threshold_cm` row.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cohort::Cohort;

/// Shipped default table (necrosis omitted, Nx scored as N0).
pub const DEFAULT_POINT_TABLE: &str = include_str!("../data/leibovich_adjusted.csv");

#[derive(Debug, Error)]
pub enum LeibovichError {
    #[error("no points for {component} level {level:?}")]
    UnknownLevel { component: Component, level: String },
    #[error("no patient has complete Leibovich features")]
    NoCompleteFeatures,
    #[error("point table line {line}: {message}")]
    BadTable { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TStage {
    T1a,
    T1b,
    T2,
    T3,
    T4,
}

impl TStage {
    pub const ALL: [TStage; 5] = [TStage::T1a, TStage::T1b, TStage::T2, TStage::T3, TStage::T4];
}

impl fmt::Display for TStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TStage::T1a => "T1a",
            TStage::T1b => "T1b",
            TStage::T2 => "T2",
            TStage::T3 => "T3",
            TStage::T4 => "T4",
        })
    }
}

impl FromStr for TStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "T1a" => TStage::T1a,
            "T1b" => TStage::T1b,
            "T2" => TStage::T2,
            "T3" => TStage::T3,
            "T4" => TStage::T4,
            other => return Err(format!("unknown t_stage {other:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NStage {
    N0,
    Nx,
    N1plus,
}

impl NStage {
    pub const ALL: [NStage; 3] = [NStage::N0, NStage::Nx, NStage::N1plus];
}

impl fmt::Display for NStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NStage::N0 => "N0",
            NStage::Nx => "Nx",
            NStage::N1plus => "N1plus",
        })
    }
}

impl FromStr for NStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "N0" => NStage::N0,
            "Nx" | "NX" => NStage::Nx,
            "N1plus" | "N1" | "N2" => NStage::N1plus,
            other => return Err(format!("unknown n_stage {other:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeibovichFeatures {
    pub t_stage: TStage,
    pub n_stage: NStage,
    pub tumor_size_cm: f64,
    pub grade: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    TStage,
    NStage,
    Size,
    Grade,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::TStage, Component::NStage, Component::Size, Component::Grade];

    fn name(self) -> &'static str {
        match self {
            Component::TStage => "t_stage",
            Component::NStage => "n_stage",
            Component::Size => "size",
            Component::Grade => "grade",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const SIZE_BELOW: &str = "below";
pub const SIZE_AT_OR_ABOVE: &str = "at_or_above";

#[derive(Debug, Clone, PartialEq)]
pub struct PointTable {
    points: BTreeMap<(Component, String), u32>,
    size_threshold_cm: f64,
}

impl Default for PointTable {
    fn default() -> Self {
        Self::parse(DEFAULT_POINT_TABLE).expect("bundled point table parses")
    }
}

impl PointTable {
    pub fn parse(text: &str) -> Result<Self, LeibovichError> {
        let bad = |line: usize, message: String| LeibovichError::BadTable { line, message };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| bad(1, e.to_string()))?.clone();
        if header.iter().ne(["component", "level", "points"]) {
            return Err(bad(1, "expected header component,level,points".into()));
        }
        let mut points = BTreeMap::new();
        let mut threshold = None;
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| bad(line, e.to_string()))?;
            if rec.len() != 3 {
                return Err(bad(line, format!("expected 3 fields, got {}", rec.len())));
            }
            if &rec[0] == "size_threshold_cm" {
                let t: f64 = rec[2].parse().map_err(|_| bad(line, format!("bad threshold {:?}", &rec[2])))?;
                if !(t.is_finite() && t > 0.0) {
                    return Err(bad(line, "size threshold must be positive".into()));
                }
                threshold = Some(t);
                continue;
            }
            let component = Component::ALL
                .into_iter()
                .find(|c| c.name() == &rec[0])
                .ok_or_else(|| bad(line, format!("unknown component {:?}", &rec[0])))?;
            let p: u32 = rec[2].parse().map_err(|_| bad(line, format!("points must be a nonnegative integer, got {:?}", &rec[2])))?;
            if points.insert((component, rec[1].to_string()), p).is_some() {
                return Err(bad(line, format!("duplicate row for {component} {:?}", &rec[1])));
            }
        }
        let size_threshold_cm = threshold.ok_or_else(|| bad(0, "missing size_threshold_cm row".into()))?;
        Ok(Self {
            points,
            size_threshold_cm,
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, LeibovichError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn size_threshold_cm(&self) -> f64 {
        self.size_threshold_cm
    }

    pub fn points(&self, component: Component, level: &str) -> Result<u32, LeibovichError> {
        self.points
            .get(&(component, level.to_string()))
            .copied()
            .ok_or_else(|| LeibovichError::UnknownLevel {
                component,
                level: level.to_string(),
            })
    }

    pub fn rows(&self) -> impl Iterator<Item = (Component, &str, u32)> {
        self.points.iter().map(|((c, l), &p)| (*c, l.as_str(), p))
    }

    /// Canonical CSV rendering (sorted rows), used for reports and hashing.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,level,points\n");
        for (c, l, p) in self.rows() {
            out.push_str(&format!("{c},{l},{p}\n"));
        }
        out.push_str(&format!("size_threshold_cm,,{}\n", self.size_threshold_cm));
        out
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv().as_bytes()))
    }

    fn size_level(&self, size_cm: f64) -> &'static str {
        if size_cm >= self.size_threshold_cm {
            SIZE_AT_OR_ABOVE
        } else {
            SIZE_BELOW
        }
    }

    /// Per-component points for `f`, in [`Component::ALL`] order.
    pub fn components(&self, f: &LeibovichFeatures) -> Result<[u32; 4], LeibovichError> {
        Ok([
            self.points(Component::TStage, &f.t_stage.to_string())?,
            self.points(Component::NStage, &f.n_stage.to_string())?,
            self.points(Component::Size, self.size_level(f.tumor_size_cm))?,
            self.points(Component::Grade, &f.grade.to_string())?,
        ])
    }
}

pub fn adjusted_leibovich(f: &LeibovichFeatures, table: &PointTable) -> Result<u32, LeibovichError> {
    Ok(table.components(f)?.iter().sum())
}

/// Clinical-baseline scores for the patients of a cohort that have complete
/// features.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortScores {
    /// Cohort positions of the scored patients.
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
    /// Ids of patients excluded for missing features.
    pub missing: Vec<String>,
    pub distribution: BTreeMap<u32, usize>,
}

impl CohortScores {
    pub fn fraction_below(&self, k: u32) -> f64 {
        let below: usize = self.distribution.range(..k).map(|(_, n)| n).sum();
        below as f64 / self.scores.len() as f64
    }

    /// Score per cohort position, `None` where features are missing.
    pub fn by_position(&self, n: usize) -> Vec<Option<f64>> {
        let mut out = vec![None; n];
        for (&i, &s) in self.indices.iter().zip(&self.scores) {
            out[i] = Some(s);
        }
        out
    }
}

pub fn leibovich_cohort_scores(cohort: &Cohort, table: &PointTable) -> Result<CohortScores, LeibovichError> {
    let mut out = CohortScores {
        indices: Vec::new(),
        scores: Vec::new(),
        missing: Vec::new(),
        distribution: BTreeMap::new(),
    };
    for (i, p) in cohort.patients().iter().enumerate() {
        match &p.leibovich {
            Some(f) => {
                let s = adjusted_leibovich(f, table)?;
                out.indices.push(i);
                out.scores.push(f64::from(s));
                *out.distribution.entry(s).or_default() += 1;
            }
            None => out.missing.push(p.patient_id.clone()),
        }
    }
    if out.scores.is_empty() {
        return Err(LeibovichError::NoCompleteFeatures);
    }
    Ok(out)
}
