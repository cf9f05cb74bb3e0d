//! ROUGE-L and METEOR over a shared tokenizer, and their average.
//!
//! The average of ROUGE-L F1 and METEOR drives checkpoint selection and the
//! choice of in-context examples for the LLM slide selector.

mod meteor;
mod rouge;
mod tokenize;

pub use meteor::{meteor, meteor_with, Alignment, MeteorParams, MeteorScore, EXHAUSTIVE_ALIGNMENT_LIMIT};
pub use rouge::{lcs_len, rouge_l, RougeScore};
pub use tokenize::{tokenize, TokenList};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub rouge_l: RougeScore,
    pub meteor: f64,
    /// `(rouge_l.f + meteor) / 2`
    pub avg: f64,
}

pub fn avg_nlg(candidate: &str, reference: &str) -> MetricScore {
    let cand = tokenize(candidate);
    let refs = tokenize(reference);
    score_tokens(&cand, &refs)
}

pub fn score_tokens(candidate: &TokenList, reference: &TokenList) -> MetricScore {
    let rouge_l = rouge_l(candidate, reference);
    let meteor = meteor(candidate, reference);
    MetricScore { rouge_l, meteor, avg: (rouge_l.f + meteor) / 2.0 }
}

/// Input line of the batch scoring mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub candidate: String,
    pub reference: String,
}

/// Output line of the batch scoring mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub rouge_l_f: f64,
    pub meteor: f64,
    pub avg: f64,
}

impl ScoreRecord {
    pub fn new(id: impl Into<String>, score: &MetricScore) -> Self {
        Self { id: id.into(), rouge_l_f: score.rouge_l.f, meteor: score.meteor, avg: score.avg }
    }
}

pub fn score_pair(pair: &PairRecord) -> ScoreRecord {
    ScoreRecord::new(pair.id.clone(), &avg_nlg(&pair.candidate, &pair.reference))
}
