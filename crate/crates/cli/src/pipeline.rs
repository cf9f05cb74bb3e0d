//! Record shapes passed between pipeline stages.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use slidereport_core::baselines::SlideNote;
use slidereport_core::dataset::{Part, PartCategory, PartRecord, Split, SplitAssignment};
use slidereport_core::generation::PromptMode;
use slidereport_core::stats::TextSource;
use slidereport_core::tiler::{read_patch_index, PatchSequence};

use crate::error::{CliError, Result};
use crate::jsonl;

/// A part with its category, sampled slides and per-slide patch counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartBundle {
    #[serde(flatten)]
    pub record: PartRecord,
    pub category: PartCategory,
    pub sampled_slide_ids: Vec<String>,
    pub patch_counts: BTreeMap<String, usize>,
}

impl PartBundle {
    pub fn part(&self) -> Result<Part> {
        Part::try_from(self.record.clone()).map_err(CliError::from)
    }
}

/// One generated or baseline candidate text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub part_id: String,
    pub text_source: TextSource,
    pub mode: PromptMode,
    pub label: String,
    /// The candidate finding shown to raters and scored.
    pub finding: String,
    /// Raw model output.
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
    pub flagged_empty: bool,
    pub slide_ids: Vec<String>,
}

/// Per-slide notes for one part, in slide order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoteRecord {
    pub part_id: String,
    pub notes: Vec<SlideNote>,
}

impl NoteRecord {
    pub fn texts(&self) -> Vec<String> {
        self.notes.iter().filter(|n| !n.flagged_empty).map(|n| n.text.clone()).collect()
    }
}

pub fn read_bundles(path: &Path) -> Result<Vec<PartBundle>> {
    let bundles: Vec<PartBundle> = jsonl::read(path)?;
    for b in &bundles {
        b.part()?;
    }
    Ok(bundles)
}

/// Keeps bundles whose case is in `split`; all of them when no split is given.
pub fn filter_split(bundles: Vec<PartBundle>, split: Option<(&SplitAssignment, Split)>) -> Result<Vec<PartBundle>> {
    let Some((assignment, wanted)) = split else {
        return Ok(bundles);
    };
    let mut out = Vec::new();
    for b in bundles {
        match assignment.split_of(&b.record.case_id) {
            Some(s) if s == wanted => out.push(b),
            Some(_) => {}
            None => {
                return Err(CliError::Validation(format!("case {} is missing from the split file", b.record.case_id)))
            }
        }
    }
    Ok(out)
}

pub fn load_split(path: Option<&Path>, split: Option<Split>) -> Result<Option<(SplitAssignment, Split)>> {
    match (path, split) {
        (Some(p), Some(s)) => Ok(Some((jsonl::read_json(p)?, s))),
        (None, None) => Ok(None),
        (Some(_), None) => Err(CliError::Validation("--split-file needs --split".into())),
        (None, Some(_)) => Err(CliError::Validation("--split needs --split-file".into())),
    }
}

/// Reads the patch index of every listed slide under `root`.
pub fn read_indices<'a>(
    root: &Path,
    slide_ids: impl IntoIterator<Item = &'a String>,
) -> Result<BTreeMap<String, PatchSequence>> {
    let mut out = BTreeMap::new();
    for id in slide_ids {
        if out.contains_key(id) {
            continue;
        }
        let dir = root.join(id);
        if !dir.join("index.jsonl").is_file() {
            return Err(CliError::Validation(format!("slide {id} has no patch index under {}", root.display())));
        }
        let mut seq = read_patch_index(&dir)?;
        seq.slide_id = id.clone();
        out.insert(id.clone(), seq);
    }
    Ok(out)
}
