//! Rating statistics: bootstrap intervals, the signed-rank test, pairwise
//! preference categories, severity strata and the tabulations behind the
//! analysis report.

mod analysis;
mod bootstrap;
mod preference;
mod severity;
mod tables;
mod wilcoxon;

pub use analysis::{
    analyze, AnalysisConfig, AnalysisInput, AnalysisReport, CategoryScores, PairedTest, RatingDistribution,
    SourceMean, SourceScore, TissueTable,
};
pub use bootstrap::{bootstrap_ci, bootstrap_statistic, mean, percentile, ConfidenceInterval};
pub use preference::{
    preference_category, preference_summary, ExclusionRule, PreferenceCategory, PreferenceScope, PreferenceSummary,
};
pub use severity::{severity_classify, SeverityLexicon};
pub use tables::{
    group_rare, nlg_vs_rating, rater_confusion, select_eval_sample, ConfusionMatrix, NlgRatingBucket,
    NlgVsRating, Quartiles, DEFAULT_COMMON_TISSUES,
};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonMethod, WilcoxonResult, EXACT_MAX_N};

use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("input is empty")]
    Empty,
    #[error("all differences are zero")]
    Degenerate,
    #[error("score {0} is outside 1..=5")]
    ScoreOutOfRange(i64),
    #[error("no parts remain after exclusion")]
    NoIncludedParts,
    #[error("stratum {stratum} has {available} parts, {needed} needed")]
    InsufficientStratum { stratum: String, available: usize, needed: usize },
    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Origin of a candidate text shown to raters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSource {
    Original,
    SsRandom,
    SsLlm,
    MultiSlide,
}

impl TextSource {
    pub const ALL: [TextSource; 4] =
        [TextSource::Original, TextSource::SsRandom, TextSource::SsLlm, TextSource::MultiSlide];

    pub fn as_str(self) -> &'static str {
        match self {
            TextSource::Original => "original",
            TextSource::SsRandom => "ss_random",
            TextSource::SsLlm => "ss_llm",
            TextSource::MultiSlide => "multi_slide",
        }
    }
}

impl fmt::Display for TextSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TextSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        TextSource::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown text source {s:?}"))
    }
}

/// A rubric score: 1 (completely inaccurate) to 5 (highly accurate), or the
/// need-more-info escape hatch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Score {
    Rated(u8),
    NeedMoreInfo,
}

pub const NEED_MORE_INFO: &str = "NEED_MORE_INFO";

impl Score {
    pub fn new(value: i64) -> Result<Self, StatsError> {
        if (1..=5).contains(&value) {
            Ok(Score::Rated(value as u8))
        } else {
            Err(StatsError::ScoreOutOfRange(value))
        }
    }

    pub fn value(self) -> Option<u8> {
        match self {
            Score::Rated(v) => Some(v),
            Score::NeedMoreInfo => None,
        }
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Score::Rated(v) => s.serialize_u8(*v),
            Score::NeedMoreInfo => s.serialize_str(NEED_MORE_INFO),
        }
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => Score::new(v).map_err(serde::de::Error::custom),
            Raw::Text(t) if t == NEED_MORE_INFO => Ok(Score::NeedMoreInfo),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("invalid score {t:?}"))),
        }
    }
}

/// One rater's judgment of one candidate text for one part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub part_id: String,
    pub rater_id: String,
    pub text_source: TextSource,
    pub score: Score,
    #[serde(default)]
    pub comment: String,
}

pub fn read_ratings_jsonl(path: &Path) -> Result<Vec<RatingRecord>, StatsError> {
    read_jsonl(path)
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, StatsError> {
    let path_str = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| StatsError::Io { path: path_str.clone(), source })?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| StatsError::Io { path: path_str.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| StatsError::Parse {
            path: path_str.clone(),
            reason: format!("line {}: {e}", n + 1),
        })?);
    }
    Ok(out)
}
