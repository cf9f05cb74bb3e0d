use serde::{Deserialize, Serialize};

use super::{best_note, BaselineError, IclExample};

pub const SSLLM_HEADER: &str = "You are given a set of diagnosis notes for a set of pathology slides from a case.
Output a version that is most consistent and clinically significant.
If there is only one note, output that one.
Follow the examples below. Be sure to end with the <END> tag as in the examples.";

const END_TAG: &str = "<END>";
const RESPONSE_TAG: &str = "*Response*";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionFlag {
    /// The response did not end with the end tag.
    MissingEndTag,
    /// The response matched no note verbatim; the metric-nearest note was used.
    Fallback,
    /// Only one note existed, so no model call was made.
    SingleNote,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub text: String,
    pub flags: Vec<SelectionFlag>,
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_marker(line: &str) -> bool {
    let t = line.trim_start();
    t.starts_with("*Example ") || t.starts_with("*Note ") || t.trim_end() == RESPONSE_TAG || t.contains(END_TAG)
}

fn check_text(text: &str) -> Result<(), BaselineError> {
    if text.lines().any(is_marker) || text.contains(END_TAG) {
        return Err(BaselineError::MalformedPrompt(format!("text collides with prompt markers: {text:?}")));
    }
    Ok(())
}

fn push_block(out: &mut String, k: usize, notes: &[String]) {
    out.push_str(&format!("*Example {k}*\n"));
    for (i, n) in notes.iter().enumerate() {
        out.push_str(format!("*Note {}* {}", i + 1, n.trim()).trim_end());
        out.push('\n');
    }
    out.push_str(RESPONSE_TAG);
    out.push('\n');
}

/// Header, one answered block per example, then the query notes as an
/// unanswered final block.
pub fn build_ssllm_prompt(notes: &[String], icl: &[IclExample]) -> Result<String, BaselineError> {
    if notes.is_empty() {
        return Err(BaselineError::NoNotes);
    }
    for text in notes.iter().chain(icl.iter().flat_map(|e| e.notes.iter().chain([&e.response]))) {
        check_text(text)?;
    }
    let mut out = String::from(SSLLM_HEADER);
    out.push_str("\n\n");
    for (k, ex) in icl.iter().enumerate() {
        push_block(&mut out, k + 1, &ex.notes);
        out.push_str(ex.response.trim());
        out.push('\n');
        out.push_str(END_TAG);
        out.push_str("\n\n");
    }
    push_block(&mut out, icl.len() + 1, notes);
    Ok(out)
}

#[derive(Default)]
struct Block {
    notes: Vec<String>,
    response: Option<Vec<String>>,
}

/// Inverse of [`build_ssllm_prompt`], returning the examples and query notes.
pub fn parse_ssllm_prompt(text: &str) -> Result<(Vec<IclExample>, Vec<String>), BaselineError> {
    let bad = |m: String| BaselineError::MalformedPrompt(m);
    let body = text.strip_prefix(SSLLM_HEADER).ok_or_else(|| bad("missing header".into()))?;
    let mut examples = Vec::new();
    let mut current: Option<Block> = None;
    for line in body.lines() {
        let t = line.trim();
        if let Some(k) = t.strip_prefix("*Example ").and_then(|r| r.strip_suffix('*')) {
            if current.is_some() {
                return Err(bad(format!("example {k} starts before the previous block ended")));
            }
            if k.parse::<usize>().ok() != Some(examples.len() + 1) {
                return Err(bad(format!("unexpected example number {k}")));
            }
            current = Some(Block::default());
            continue;
        }
        let Some(block) = current.as_mut() else {
            if t.is_empty() {
                continue;
            }
            return Err(bad(format!("text outside a block: {t:?}")));
        };
        if t == END_TAG {
            let b = current.take().unwrap();
            let response = b.response.ok_or_else(|| bad("end tag before response".into()))?;
            examples.push(IclExample { notes: b.notes, response: response.join("\n").trim().to_string() });
        } else if t == RESPONSE_TAG {
            block.response = Some(Vec::new());
        } else if let Some(resp) = block.response.as_mut() {
            resp.push(line.to_string());
        } else if let Some(rest) = t.strip_prefix("*Note ") {
            let (num, note) = rest.split_once('*').ok_or_else(|| bad(format!("bad note line {t:?}")))?;
            if num.parse::<usize>().ok() != Some(block.notes.len() + 1) {
                return Err(bad(format!("unexpected note number {num}")));
            }
            block.notes.push(note.trim().to_string());
        } else if let Some(last) = block.notes.last_mut() {
            last.push('\n');
            last.push_str(line);
        } else if !t.is_empty() {
            return Err(bad(format!("text before the first note: {t:?}")));
        }
    }
    let query = current.ok_or_else(|| bad("missing query block".into()))?;
    match query.response {
        Some(r) if r.iter().all(|l| l.trim().is_empty()) => {}
        _ => return Err(bad("query block must end with an empty response".into())),
    }
    let notes = query.notes.into_iter().map(|n| n.trim().to_string()).collect();
    for ex in &mut examples {
        for n in &mut ex.notes {
            *n = n.trim().to_string();
        }
    }
    Ok((examples, notes))
}

/// Maps a model response onto one of `notes`.
pub fn parse_ssllm_response(raw: &str, notes: &[String]) -> Result<Selection, BaselineError> {
    if notes.is_empty() {
        return Err(BaselineError::NoNotes);
    }
    let mut flags = Vec::new();
    let body = match raw.find(END_TAG) {
        Some(i) => &raw[..i],
        None => {
            flags.push(SelectionFlag::MissingEndTag);
            raw
        }
    };
    let body = body.trim();
    if body.is_empty() {
        return Err(BaselineError::SelectionFailed("empty response".into()));
    }
    let wanted = normalize(body);
    if let Some(index) = notes.iter().position(|n| normalize(n) == wanted) {
        return Ok(Selection { index, text: notes[index].clone(), flags });
    }
    let index = best_note(notes, body)?;
    flags.push(SelectionFlag::Fallback);
    Ok(Selection { index, text: notes[index].clone(), flags })
}
