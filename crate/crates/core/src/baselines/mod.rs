//! Single-slide baselines: report one randomly picked slide per part, or let
//! a language model pick among the per-slide notes with in-context examples.

mod prompt;

pub use prompt::{build_ssllm_prompt, parse_ssllm_prompt, parse_ssllm_response, Selection, SelectionFlag, SSLLM_HEADER};

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Part;
use crate::generation::{GenerationBackend, GenerationError, GenerationRequest};
use crate::metrics::avg_nlg;
use crate::seeding::keyed_rng;

pub const DEFAULT_ICL_EXAMPLES: usize = 50;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("part {0} has no slides")]
    EmptyPart(String),
    #[error("no notes to select from")]
    NoNotes,
    #[error("validation pool is empty")]
    EmptyPool,
    #[error("selection failed: {0}")]
    SelectionFailed(String),
    #[error("malformed selection prompt: {0}")]
    MalformedPrompt(String),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

/// Uniform seeded choice of one slide, fixed per `(seed, part_id)`.
pub fn ss_random(part: &Part, seed: u64) -> Result<String, BaselineError> {
    if part.slide_ids.is_empty() {
        return Err(BaselineError::EmptyPart(part.part_id.clone()));
    }
    let mut rng = keyed_rng(seed, &["ss_random", &part.part_id]);
    Ok(part.slide_ids[rng.random_range(0..part.slide_ids.len())].clone())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlideNote {
    pub slide_id: String,
    pub text: String,
    #[serde(default)]
    pub flagged_empty: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IclExample {
    pub notes: Vec<String>,
    pub response: String,
}

/// A validation part with its per-slide notes and reference finding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationPart {
    pub part_id: String,
    pub notes: Vec<String>,
    pub ground_truth: String,
}

/// Index of the note with the highest avg NLG score against `reference`;
/// ties go to the earliest note.
pub fn best_note(notes: &[String], reference: &str) -> Result<usize, BaselineError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, n) in notes.iter().enumerate() {
        let s = avg_nlg(n, reference).avg;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i).ok_or(BaselineError::NoNotes)
}

/// Seeded sample of `n` validation parts (all of them when fewer), each
/// answered by its best-scoring note. Parts without notes are skipped.
pub fn select_icl_examples(val: &[ValidationPart], n: usize, seed: u64) -> Result<Vec<IclExample>, BaselineError> {
    let pool: Vec<&ValidationPart> = val.iter().filter(|p| !p.notes.is_empty()).collect();
    if pool.is_empty() {
        return Err(BaselineError::EmptyPool);
    }
    let mut rng = keyed_rng(seed, &["icl_examples"]);
    let mut picked = index::sample(&mut rng, pool.len(), n.min(pool.len())).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| {
            let p = pool[i];
            let best = best_note(&p.notes, &p.ground_truth)?;
            Ok(IclExample { notes: p.notes.clone(), response: p.notes[best].clone() })
        })
        .collect()
}

/// One line of the selection run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionLog {
    pub part_id: String,
    pub notes: Vec<String>,
    pub selected: String,
    pub flags: Vec<SelectionFlag>,
}

/// Picks one note with the language model. A single note is returned without
/// a model call.
pub fn ss_llm_select(
    part_id: &str,
    notes: &[String],
    icl: &[IclExample],
    backend: &dyn GenerationBackend,
) -> Result<SelectionLog, BaselineError> {
    let selection = match notes {
        [] => return Err(BaselineError::NoNotes),
        [only] => Selection { index: 0, text: only.clone(), flags: vec![SelectionFlag::SingleNote] },
        _ => {
            let prompt = build_ssllm_prompt(notes, icl)?;
            let out = backend.generate(&GenerationRequest::raw(prompt))?;
            parse_ssllm_response(&out.text, notes)?
        }
    };
    Ok(SelectionLog {
        part_id: part_id.to_string(),
        notes: notes.to_vec(),
        selected: selection.text,
        flags: selection.flags,
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), BaselineError> {
    let err = |e: std::io::Error| BaselineError::Io { path: path.display().to_string(), reason: e.to_string() };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(err)?);
    for item in items {
        writeln!(out, "{}", serde_json::to_string(item).expect("record serializes")).map_err(err)?;
    }
    out.flush().map_err(err)
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, BaselineError> {
    let err = |reason: String| BaselineError::Io { path: path.display().to_string(), reason };
    let file = std::fs::File::open(path).map_err(|e| err(e.to_string()))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| err(e.to_string()))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", n + 1)))?);
        }
    }
    Ok(out)
}
