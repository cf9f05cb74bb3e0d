use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{percentile, RatingRecord, Score, SourceScore, StatsError, TextSource};
use crate::dataset::Part;
use crate::seeding::keyed_rng;

pub const DEFAULT_COMMON_TISSUES: [&str; 3] = ["colorectal", "skin", "cervix"];

/// Seeded stratified sample: `ceil(n/2)` parts whose tissue is in `common`
/// and `floor(n/2)` from the rest, returned in input order.
pub fn select_eval_sample(
    parts: &[Part],
    n: usize,
    common: &BTreeSet<String>,
    seed: u64,
) -> Result<Vec<Part>, StatsError> {
    let (common_idx, uncommon_idx): (Vec<usize>, Vec<usize>) =
        (0..parts.len()).partition(|&i| common.contains(&parts[i].tissue_name()));
    let mut picked = Vec::with_capacity(n);
    for (name, pool, k) in [("common", &common_idx, n.div_ceil(2)), ("uncommon", &uncommon_idx, n / 2)] {
        if pool.len() < k {
            return Err(StatsError::InsufficientStratum { stratum: name.into(), available: pool.len(), needed: k });
        }
        let mut rng = keyed_rng(seed, &["select_eval_sample", name]);
        picked.extend(index::sample(&mut rng, pool.len(), k).into_iter().map(|j| pool[j]));
    }
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| parts[i].clone()).collect())
}

/// Rows are rater A's score, columns rater B's, index `score - 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub text_source: TextSource,
    pub rater_a: String,
    pub rater_b: String,
    pub counts: [[usize; 5]; 5],
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn agreement(&self) -> usize {
        (0..5).map(|i| self.counts[i][i]).sum()
    }
}

/// Joint score counts of two raters over the parts both scored for `source`.
pub fn rater_confusion(ratings: &[RatingRecord], source: TextSource, rater_a: &str, rater_b: &str) -> ConfusionMatrix {
    let mut a: BTreeMap<&str, u8> = BTreeMap::new();
    let mut b: BTreeMap<&str, u8> = BTreeMap::new();
    for r in ratings.iter().filter(|r| r.text_source == source) {
        if let Score::Rated(v) = r.score {
            if r.rater_id == rater_a {
                a.insert(&r.part_id, v);
            } else if r.rater_id == rater_b {
                b.insert(&r.part_id, v);
            }
        }
    }
    let mut counts = [[0usize; 5]; 5];
    for (part, va) in &a {
        if let Some(vb) = b.get(part) {
            counts[*va as usize - 1][*vb as usize - 1] += 1;
        }
    }
    ConfusionMatrix { text_source: source, rater_a: rater_a.into(), rater_b: rater_b.into(), counts }
}

pub const OTHER_LABEL: &str = "other";

/// Folds labels whose share of the total is at most `threshold` into "other".
pub fn group_rare(counts: &BTreeMap<String, usize>, threshold: f64) -> BTreeMap<String, usize> {
    let total: usize = counts.values().sum();
    let mut out = BTreeMap::new();
    if total == 0 {
        return out;
    }
    for (label, &c) in counts {
        let key = if c as f64 / total as f64 <= threshold { OTHER_LABEL } else { label.as_str() };
        *out.entry(key.to_string()).or_insert(0) += c;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Quartiles {
            min: v[0],
            q1: percentile(&v, 0.25),
            median: percentile(&v, 0.5),
            q3: percentile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlgRatingBucket {
    pub rating: u8,
    pub n: usize,
    pub rouge_l: Option<Quartiles>,
    pub meteor: Option<Quartiles>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlgVsRating {
    pub reads_total: usize,
    /// Reads dropped because the same rater scored the original text below 4
    /// (or did not score it).
    pub reads_dropped: usize,
    pub buckets: Vec<NlgRatingBucket>,
}

/// NLG metrics of generated texts grouped by the rating each read received.
pub fn nlg_vs_rating(ratings: &[RatingRecord], scores: &[SourceScore]) -> NlgVsRating {
    let original: BTreeMap<(&str, &str), Score> = ratings
        .iter()
        .filter(|r| r.text_source == TextSource::Original)
        .map(|r| ((r.part_id.as_str(), r.rater_id.as_str()), r.score))
        .collect();
    let metric: BTreeMap<(&str, TextSource), &SourceScore> =
        scores.iter().map(|s| ((s.part_id.as_str(), s.text_source), s)).collect();

    let mut buckets: [(Vec<f64>, Vec<f64>); 5] = Default::default();
    let mut total = 0;
    let mut dropped = 0;
    for r in ratings.iter().filter(|r| r.text_source != TextSource::Original) {
        let (Score::Rated(v), Some(m)) = (r.score, metric.get(&(r.part_id.as_str(), r.text_source))) else {
            continue;
        };
        total += 1;
        let keep = matches!(original.get(&(r.part_id.as_str(), r.rater_id.as_str())), Some(Score::Rated(o)) if *o >= 4);
        if !keep {
            dropped += 1;
            continue;
        }
        let b = &mut buckets[v as usize - 1];
        b.0.push(m.rouge_l_f);
        b.1.push(m.meteor);
    }
    NlgVsRating {
        reads_total: total,
        reads_dropped: dropped,
        buckets: buckets
            .iter()
            .enumerate()
            .map(|(i, (rouge, met))| NlgRatingBucket {
                rating: i as u8 + 1,
                n: rouge.len(),
                rouge_l: Quartiles::of(rouge),
                meteor: Quartiles::of(met),
            })
            .collect(),
    }
}
