use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use slidereport_core::seeding::{derive_seed, keyed_rng, sha256_hex};
use slidereport_core::stats::{RatingRecord, Score, TextSource};

use crate::RatingError;

/// Candidate texts for one part, keyed by source. Only the session creator
/// sees this shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartCandidates {
    pub part_id: String,
    #[serde(default)]
    pub slide_ids: Vec<String>,
    pub candidates: BTreeMap<TextSource, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct BlindedItem {
    pub blinded_id: String,
    pub text_source: TextSource,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct SessionPart {
    pub part_id: String,
    pub slide_ids: Vec<String>,
    /// Served order.
    pub items: Vec<BlindedItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum JournalEvent {
    Created { session_id: String, rater_id: String, seed: u64, parts: Vec<SessionPart> },
    Rating { part_id: String, blinded_text_id: String, score: Score, comment: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredRating {
    pub score: Score,
    pub comment: String,
    /// 1 for the first submission, incremented on each revision.
    pub revision: u32,
}

/// A replaced rating, kept for the audit trail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub part_id: String,
    pub blinded_text_id: String,
    pub previous: Score,
    pub replacement: Score,
    pub revision: u32,
}

/// Immutable view of a session; each write publishes a new one.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionState {
    pub session_id: String,
    pub rater_id: String,
    pub seed: u64,
    pub(crate) parts: Vec<SessionPart>,
    pub(crate) ratings: HashMap<String, StoredRating>,
    pub audit: Vec<AuditEntry>,
}

/// One text as shown to a rater: no source information.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlindedText {
    pub blinded_text_id: String,
    pub text: String,
    pub score: Option<Score>,
    pub comment: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingTask {
    pub part_id: String,
    /// Position of this part in the session queue.
    pub index: usize,
    pub slide_ids: Vec<String>,
    pub texts: Vec<BlindedText>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
    pub parts_completed: usize,
    pub parts_total: usize,
}

impl SessionState {
    pub fn n_tasks(&self) -> usize {
        self.parts.iter().map(|p| p.items.len()).sum()
    }

    pub fn progress(&self) -> Progress {
        Progress {
            completed: self.ratings.len(),
            total: self.n_tasks(),
            parts_completed: self
                .parts
                .iter()
                .filter(|p| p.items.iter().all(|i| self.ratings.contains_key(&i.blinded_id)))
                .count(),
            parts_total: self.parts.len(),
        }
    }

    fn task(&self, index: usize) -> RatingTask {
        let p = &self.parts[index];
        RatingTask {
            part_id: p.part_id.clone(),
            index,
            slide_ids: p.slide_ids.clone(),
            texts: p
                .items
                .iter()
                .map(|i| {
                    let r = self.ratings.get(&i.blinded_id);
                    BlindedText {
                        blinded_text_id: i.blinded_id.clone(),
                        text: i.text.clone(),
                        score: r.map(|r| r.score),
                        comment: r.map(|r| r.comment.clone()),
                    }
                })
                .collect(),
        }
    }

    /// First part in queue order with an unrated text.
    pub fn next_task(&self) -> Option<RatingTask> {
        self.parts
            .iter()
            .position(|p| p.items.iter().any(|i| !self.ratings.contains_key(&i.blinded_id)))
            .map(|i| self.task(i))
    }

    pub fn task_at(&self, index: usize) -> Option<RatingTask> {
        (index < self.parts.len()).then(|| self.task(index))
    }

    pub fn part_slides(&self, part_id: &str) -> Option<&[String]> {
        self.parts.iter().find(|p| p.part_id == part_id).map(|p| p.slide_ids.as_slice())
    }

    /// Unblinded records for every rated text, in queue order.
    pub fn export(&self) -> Vec<RatingRecord> {
        let mut out = Vec::new();
        for p in &self.parts {
            for i in &p.items {
                if let Some(r) = self.ratings.get(&i.blinded_id) {
                    out.push(RatingRecord {
                        part_id: p.part_id.clone(),
                        rater_id: self.rater_id.clone(),
                        text_source: i.text_source,
                        score: r.score,
                        comment: r.comment.clone(),
                    });
                }
            }
        }
        out
    }

    pub fn export_jsonl(&self) -> String {
        self.export().iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
    }

    fn apply(&mut self, part_id: &str, blinded_id: &str, score: Score, comment: String) -> Result<u32, RatingError> {
        let part = self
            .parts
            .iter()
            .find(|p| p.part_id == part_id)
            .ok_or_else(|| RatingError::NotFound(format!("part {part_id}")))?;
        if !part.items.iter().any(|i| i.blinded_id == blinded_id) {
            return Err(RatingError::NotFound(format!("text {blinded_id} in part {part_id}")));
        }
        let revision = match self.ratings.get(blinded_id) {
            Some(prev) => {
                self.audit.push(AuditEntry {
                    part_id: part_id.to_string(),
                    blinded_text_id: blinded_id.to_string(),
                    previous: prev.score,
                    replacement: score,
                    revision: prev.revision + 1,
                });
                prev.revision + 1
            }
            None => 1,
        };
        self.ratings.insert(blinded_id.to_string(), StoredRating { score, comment, revision });
        Ok(revision)
    }
}

fn validate_submission(score: Score, comment: &str) -> Result<(), RatingError> {
    if score == Score::NeedMoreInfo && comment.trim().is_empty() {
        return Err(RatingError::Invalid("NEED_MORE_INFO requires a comment".into()));
    }
    Ok(())
}

struct SessionHandle {
    journal: Mutex<File>,
    snapshot: RwLock<Arc<SessionState>>,
}

/// Sessions persisted as `<dir>/<session_id>.jsonl` journals.
pub struct RatingStore {
    dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
}

fn session_id(rater_id: &str, seed: u64, parts: &[PartCandidates]) -> String {
    let body = serde_json::to_vec(&(rater_id, seed, parts)).expect("parts serialize");
    format!("s{}", &sha256_hex(&body)[..16])
}

/// Per-part order is a seeded uniform permutation; blinded ids depend on the
/// served position only.
fn blind(rater_id: &str, seed: u64, parts: &[PartCandidates]) -> Vec<SessionPart> {
    let seed_s = seed.to_string();
    let mut out: Vec<SessionPart> = parts
        .iter()
        .map(|p| {
            let mut items: Vec<(TextSource, String)> = p.candidates.iter().map(|(s, t)| (*s, t.clone())).collect();
            let mut rng = keyed_rng(seed, &["rating_order", rater_id, &p.part_id]);
            items.shuffle(&mut rng);
            let items = items
                .into_iter()
                .enumerate()
                .map(|(pos, (text_source, text))| BlindedItem {
                    blinded_id: format!(
                        "t{:016x}",
                        derive_seed(seed, &["blinded_id", rater_id, &p.part_id, &pos.to_string(), &seed_s])
                    ),
                    text_source,
                    text,
                })
                .collect();
            SessionPart { part_id: p.part_id.clone(), slide_ids: p.slide_ids.clone(), items }
        })
        .collect();
    out.shuffle(&mut keyed_rng(seed, &["part_order", rater_id]));
    out
}

fn replay(path: &Path) -> Result<SessionState, RatingError> {
    let io = |e: std::io::Error| RatingError::Storage(format!("{}: {e}", path.display()));
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut state: Option<SessionState> = None;
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let event: JournalEvent = match serde_json::from_str(&line) {
            Ok(e) => e,
            // a torn final line from a crash mid-append
            Err(e) if e.is_eof() => {
                log::warn!("{}: ignoring truncated line {}", path.display(), n + 1);
                continue;
            }
            Err(e) => return Err(RatingError::Storage(format!("{}: line {}: {e}", path.display(), n + 1))),
        };
        match (event, state.as_mut()) {
            (JournalEvent::Created { session_id, rater_id, seed, parts }, None) => {
                state = Some(SessionState { session_id, rater_id, seed, parts, ratings: HashMap::new(), audit: Vec::new() });
            }
            (JournalEvent::Rating { part_id, blinded_text_id, score, comment }, Some(s)) => {
                s.apply(&part_id, &blinded_text_id, score, comment)?;
            }
            _ => return Err(RatingError::Storage(format!("{}: line {}: out-of-order event", path.display(), n + 1))),
        }
    }
    state.ok_or_else(|| RatingError::Storage(format!("{}: empty journal", path.display())))
}

fn append(file: &mut File, event: &JournalEvent) -> Result<(), RatingError> {
    let mut line = serde_json::to_string(event).expect("event serializes");
    line.push('\n');
    file.write_all(line.as_bytes())
        .and_then(|_| file.sync_data())
        .map_err(|e| RatingError::Storage(e.to_string()))
}

impl RatingStore {
    /// Opens `dir`, replaying every journal found there.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, RatingError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| RatingError::Storage(format!("{}: {e}", dir.display())))?;
        let mut sessions = HashMap::new();
        let entries = std::fs::read_dir(&dir).map_err(|e| RatingError::Storage(e.to_string()))?;
        for entry in entries {
            let path = entry.map_err(|e| RatingError::Storage(e.to_string()))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let state = replay(&path)?;
            let file = OpenOptions::new().append(true).open(&path).map_err(|e| RatingError::Storage(e.to_string()))?;
            sessions.insert(
                state.session_id.clone(),
                Arc::new(SessionHandle { journal: Mutex::new(file), snapshot: RwLock::new(Arc::new(state)) }),
            );
        }
        Ok(Self { dir, sessions: RwLock::new(sessions) })
    }

    /// Creates a session, or returns the existing one for identical inputs.
    pub fn create_session(
        &self,
        parts: &[PartCandidates],
        rater_id: &str,
        seed: u64,
    ) -> Result<Arc<SessionState>, RatingError> {
        if rater_id.trim().is_empty() {
            return Err(RatingError::Invalid("rater_id is empty".into()));
        }
        if parts.is_empty() {
            return Err(RatingError::Invalid("no parts".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in parts {
            if p.candidates.len() < 2 {
                return Err(RatingError::Invalid(format!("part {} has fewer than 2 candidate texts", p.part_id)));
            }
            if !seen.insert(p.part_id.as_str()) {
                return Err(RatingError::Invalid(format!("part {} listed twice", p.part_id)));
            }
        }
        let id = session_id(rater_id, seed, parts);
        let mut sessions = self.sessions.write();
        if let Some(h) = sessions.get(&id) {
            return Ok(h.snapshot.read().clone());
        }
        let state = SessionState {
            session_id: id.clone(),
            rater_id: rater_id.to_string(),
            seed,
            parts: blind(rater_id, seed, parts),
            ratings: HashMap::new(),
            audit: Vec::new(),
        };
        let path = self.dir.join(format!("{id}.jsonl"));
        let mut file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&path)
            .map_err(|e| RatingError::Storage(format!("{}: {e}", path.display())))?;
        append(
            &mut file,
            &JournalEvent::Created {
                session_id: id.clone(),
                rater_id: state.rater_id.clone(),
                seed,
                parts: state.parts.clone(),
            },
        )?;
        let state = Arc::new(state);
        sessions.insert(id, Arc::new(SessionHandle { journal: Mutex::new(file), snapshot: RwLock::new(state.clone()) }));
        Ok(state)
    }

    pub fn session(&self, session_id: &str) -> Result<Arc<SessionState>, RatingError> {
        let sessions = self.sessions.read();
        let h = sessions.get(session_id).ok_or_else(|| RatingError::NotFound(format!("session {session_id}")))?;
        let snap = h.snapshot.read().clone();
        Ok(snap)
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Slides of `part_id` as registered by any session.
    pub fn part_slides(&self, part_id: &str) -> Option<Vec<String>> {
        let sessions = self.sessions.read();
        sessions.values().find_map(|h| h.snapshot.read().part_slides(part_id).map(<[String]>::to_vec))
    }

    /// Validates, journals and applies one rating; returns its revision number.
    pub fn submit_rating(
        &self,
        session_id: &str,
        part_id: &str,
        blinded_text_id: &str,
        score: Score,
        comment: &str,
    ) -> Result<u32, RatingError> {
        validate_submission(score, comment)?;
        let handle = self
            .sessions
            .read()
            .get(session_id)
            .cloned()
            .ok_or_else(|| RatingError::NotFound(format!("session {session_id}")))?;
        // the journal lock serializes writers of this session
        let mut journal = handle.journal.lock();
        let mut next = (**handle.snapshot.read()).clone();
        let revision = next.apply(part_id, blinded_text_id, score, comment.to_string())?;
        append(
            &mut journal,
            &JournalEvent::Rating {
                part_id: part_id.to_string(),
                blinded_text_id: blinded_text_id.to_string(),
                score,
                comment: comment.to_string(),
            },
        )?;
        *handle.snapshot.write() = Arc::new(next);
        Ok(revision)
    }
}
