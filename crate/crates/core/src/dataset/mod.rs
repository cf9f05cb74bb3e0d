//! Case, part and report data model.
//!
//! A case holds one or more parts; a part is one tissue specimen with one or
//! more slides and a report section made of a label (site and procedure) and a
//! finding (the bottom-line diagnosis).

mod report;
mod split;

pub use report::{parse_report, serialize_report, split_generated_text, ReportSection};
pub use split::{split_dataset, Split, SplitAssignment, SplitFile};

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::keyed_rng;

/// Slide cap per part; larger parts are sampled without replacement.
pub const DEFAULT_SLIDE_CAP: usize = 50;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("part {part_id}: {reason}")]
    InvalidPart { part_id: String, reason: String },
    #[error("slide count must be at least 1")]
    NoSlides,
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    InvalidRatios(Vec<f64>),
    #[error("pinned case {0} is not in the dataset")]
    UnknownPinnedCase(String),
    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Normal,
    Mild,
    Significant,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Normal, Severity::Mild, Severity::Significant];

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Normal => "normal",
            Severity::Mild => "mild",
            Severity::Significant => "significant",
        }
    }
}

/// Bucketing of parts by slide count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PartCategory {
    #[serde(rename = "P1")]
    P1,
    #[serde(rename = "P2-5")]
    P2_5,
    #[serde(rename = "P6-9")]
    P6_9,
    #[serde(rename = "P10+")]
    P10Plus,
}

impl PartCategory {
    pub const ALL: [PartCategory; 4] =
        [PartCategory::P1, PartCategory::P2_5, PartCategory::P6_9, PartCategory::P10Plus];

    pub fn as_str(self) -> &'static str {
        match self {
            PartCategory::P1 => "P1",
            PartCategory::P2_5 => "P2-5",
            PartCategory::P6_9 => "P6-9",
            PartCategory::P10Plus => "P10+",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

pub fn categorize_part(n_slides: usize) -> Result<PartCategory, DatasetError> {
    match n_slides {
        0 => Err(DatasetError::NoSlides),
        1 => Ok(PartCategory::P1),
        2..=5 => Ok(PartCategory::P2_5),
        6..=9 => Ok(PartCategory::P6_9),
        _ => Ok(PartCategory::P10Plus),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Part {
    pub case_id: String,
    pub part_id: String,
    /// Manifest order.
    pub slide_ids: Vec<String>,
    pub section: ReportSection,
    pub tissue: Option<String>,
    pub severity: Option<Severity>,
}

impl Part {
    pub fn category(&self) -> PartCategory {
        categorize_part(self.slide_ids.len()).expect("validated parts have slides")
    }

    /// Tissue name, falling back to the label text before the first comma.
    pub fn tissue_name(&self) -> String {
        match &self.tissue {
            Some(t) if !t.trim().is_empty() => t.trim().to_lowercase(),
            _ => self.section.label.split(',').next().unwrap_or("").trim().to_lowercase(),
        }
    }
}

/// One line of the parts manifest JSONL.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartRecord {
    pub case_id: String,
    pub part_id: String,
    pub slide_ids: Vec<String>,
    pub label: String,
    pub finding: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tissue: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<Severity>,
}

impl TryFrom<PartRecord> for Part {
    type Error = DatasetError;

    fn try_from(r: PartRecord) -> Result<Self, DatasetError> {
        let invalid = |reason: &str| DatasetError::InvalidPart { part_id: r.part_id.clone(), reason: reason.into() };
        if r.case_id.trim().is_empty() {
            return Err(invalid("empty case_id"));
        }
        if r.part_id.trim().is_empty() {
            return Err(invalid("empty part_id"));
        }
        if r.slide_ids.is_empty() {
            return Err(invalid("no slides"));
        }
        let mut seen = HashSet::new();
        if !r.slide_ids.iter().all(|s| seen.insert(s.as_str())) {
            return Err(invalid("duplicate slide id"));
        }
        if r.label.trim().is_empty() {
            return Err(invalid("empty label"));
        }
        let parse_warning = r.finding.trim().is_empty();
        Ok(Part {
            case_id: r.case_id,
            part_id: r.part_id,
            slide_ids: r.slide_ids,
            section: ReportSection { label: r.label.trim().to_string(), finding: r.finding, parse_warning },
            tissue: r.tissue,
            severity: r.severity,
        })
    }
}

impl From<&Part> for PartRecord {
    fn from(p: &Part) -> Self {
        PartRecord {
            case_id: p.case_id.clone(),
            part_id: p.part_id.clone(),
            slide_ids: p.slide_ids.clone(),
            label: p.section.label.clone(),
            finding: p.section.finding.clone(),
            tissue: p.tissue.clone(),
            severity: p.severity,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub case_id: String,
    pub parts: Vec<Part>,
}

impl Case {
    pub fn part_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for part in &self.parts {
            counts[part.category().index()] += 1;
        }
        counts
    }
}

/// Groups parts by case id (sorted by case id), keeping part order within a case.
/// Fails when a part id repeats inside a case.
pub fn group_cases(parts: Vec<Part>) -> Result<Vec<Case>, DatasetError> {
    let mut by_case: BTreeMap<String, Vec<Part>> = BTreeMap::new();
    for part in parts {
        by_case.entry(part.case_id.clone()).or_default().push(part);
    }
    by_case
        .into_iter()
        .map(|(case_id, parts)| {
            let mut seen = HashSet::new();
            for p in &parts {
                if !seen.insert(p.part_id.as_str()) {
                    return Err(DatasetError::InvalidPart {
                        part_id: p.part_id.clone(),
                        reason: format!("duplicate part id in case {case_id}"),
                    });
                }
            }
            Ok(Case { case_id, parts })
        })
        .collect()
}

pub fn read_parts_jsonl(path: &Path) -> Result<Vec<Part>, DatasetError> {
    let path_str = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io { path: path_str.clone(), source })?;
    let mut parts = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io { path: path_str.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PartRecord = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: path_str.clone(),
            reason: format!("line {}: {e}", n + 1),
        })?;
        parts.push(Part::try_from(record)?);
    }
    // duplicate part ids within a case are rejected here as well
    group_cases(parts.clone())?;
    Ok(parts)
}

/// Slides used for a part: all of them up to `cap`, otherwise a seeded sample
/// of `cap` distinct slides kept in manifest order.
pub fn sample_slides(part: &Part, cap: usize, seed: u64) -> Vec<String> {
    let n = part.slide_ids.len();
    let cap = cap.max(1);
    if n <= cap {
        return part.slide_ids.clone();
    }
    let mut rng = keyed_rng(seed, &["sample_slides", &part.part_id]);
    let mut picked = index::sample(&mut rng, n, cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| part.slide_ids[i].clone()).collect()
}
