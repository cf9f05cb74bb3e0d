//! METEOR with exact and stem matching stages.
//!
//! Stage one aligns identical tokens, stage two aligns the remaining tokens
//! whose stems agree. Each stage takes a maximum-cardinality one-to-one
//! matching; among all such alignments the one with the fewest chunks is
//! chosen. Within a matching class (all occurrences of one token, or of one
//! stem among the leftovers) every maximum matching is an injection of the
//! smaller side into the larger one, so the alignment space is the product of
//! falling factorials over classes. Spaces up to
//! [`EXHAUSTIVE_ALIGNMENT_LIMIT`] are searched exhaustively; larger ones use a
//! greedy left-to-right pass that prefers extending the current chunk.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

/// Alignment-space size above which the greedy pass is used.
pub const EXHAUSTIVE_ALIGNMENT_LIMIT: u64 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeteorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for MeteorParams {
    fn default() -> Self {
        Self { alpha: 0.9, beta: 3.0, gamma: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    /// `(candidate index, reference index)` sorted by candidate index.
    pub pairs: Vec<(usize, usize)>,
    pub chunks: usize,
    /// False when the greedy fallback produced the alignment.
    pub exhaustive: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeteorScore {
    pub alignment: Alignment,
    pub precision: f64,
    pub recall: f64,
    pub fmean: f64,
    pub penalty: f64,
    pub score: f64,
}

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

pub(crate) fn stem(token: &str) -> String {
    stemmer().stem(token).into_owned()
}

pub fn meteor(candidate: &[String], reference: &[String]) -> f64 {
    meteor_with(candidate, reference, &MeteorParams::default(), EXHAUSTIVE_ALIGNMENT_LIMIT).score
}

pub fn meteor_with(
    candidate: &[String],
    reference: &[String],
    params: &MeteorParams,
    exhaustive_limit: u64,
) -> MeteorScore {
    let alignment = align(candidate, reference, exhaustive_limit);
    let m = alignment.pairs.len();
    if m == 0 {
        return MeteorScore { alignment, precision: 0.0, recall: 0.0, fmean: 0.0, penalty: 0.0, score: 0.0 };
    }
    let precision = m as f64 / candidate.len() as f64;
    let recall = m as f64 / reference.len() as f64;
    let fmean = precision * recall / (params.alpha * precision + (1.0 - params.alpha) * recall);
    let penalty = params.gamma * (alignment.chunks as f64 / m as f64).powf(params.beta);
    let score = fmean * (1.0 - penalty);
    MeteorScore { alignment, precision, recall, fmean, penalty, score }
}

/// One matching class: occurrences on both sides that may be paired.
struct Class {
    cand: Vec<usize>,
    refs: Vec<usize>,
}

impl Class {
    fn size(&self) -> u64 {
        let (small, large) = ordered(self.cand.len(), self.refs.len());
        falling_factorial(large, small)
    }
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn falling_factorial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc.saturating_mul((n - i) as u64))
}

fn classes_by_key<'a>(
    cand_keys: impl Iterator<Item = (usize, &'a str)>,
    ref_keys: impl Iterator<Item = (usize, &'a str)>,
) -> Vec<Class> {
    let mut map: BTreeMap<&str, Class> = BTreeMap::new();
    for (i, k) in cand_keys {
        map.entry(k).or_insert_with(|| Class { cand: Vec::new(), refs: Vec::new() }).cand.push(i);
    }
    for (j, k) in ref_keys {
        if let Some(class) = map.get_mut(k) {
            class.refs.push(j);
        }
    }
    map.into_values().filter(|c| !c.refs.is_empty()).collect()
}

fn count_chunks(align: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for (i, j) in align.iter().enumerate().filter_map(|(i, j)| j.map(|j| (i, j))) {
        match prev {
            Some((pi, pj)) if pi + 1 == i && pj + 1 == j => {}
            _ => chunks += 1,
        }
        prev = Some((i, j));
    }
    chunks
}

pub(crate) fn align(candidate: &[String], reference: &[String], exhaustive_limit: u64) -> Alignment {
    let cand_stems: Vec<String> = candidate.iter().map(|t| stem(t)).collect();
    let ref_stems: Vec<String> = reference.iter().map(|t| stem(t)).collect();

    let exact = classes_by_key(
        candidate.iter().map(String::as_str).enumerate(),
        reference.iter().map(String::as_str).enumerate(),
    );

    // Stem-stage class sizes depend only on how many occurrences of each token
    // remain after the exact stage, not on which ones.
    let mut cand_count: BTreeMap<&str, usize> = BTreeMap::new();
    let mut ref_count: BTreeMap<&str, usize> = BTreeMap::new();
    for t in candidate {
        *cand_count.entry(t).or_default() += 1;
    }
    for t in reference {
        *ref_count.entry(t).or_default() += 1;
    }
    let leftover_by_stem = |own: &BTreeMap<&str, usize>, other: &BTreeMap<&str, usize>| {
        let mut by_stem: BTreeMap<String, usize> = BTreeMap::new();
        for (t, &n) in own {
            let left = n - n.min(other.get(t).copied().unwrap_or(0));
            if left > 0 {
                *by_stem.entry(stem(t)).or_default() += left;
            }
        }
        by_stem
    };
    let stem_left_cand = leftover_by_stem(&cand_count, &ref_count);
    let stem_left_ref = leftover_by_stem(&ref_count, &cand_count);
    let stem_space = stem_left_cand
        .iter()
        .filter_map(|(s, &a)| {
            stem_left_ref.get(s).map(|&b| {
                let (small, large) = ordered(a, b);
                falling_factorial(large, small)
            })
        })
        .fold(1u64, u64::saturating_mul);
    let space = exact.iter().map(Class::size).fold(stem_space, u64::saturating_mul);

    let align = if space <= exhaustive_limit {
        exhaustive_alignment(candidate.len(), reference.len(), &exact, &cand_stems, &ref_stems)
    } else {
        greedy_alignment(candidate, reference, &cand_stems, &ref_stems)
    };
    let chunks = count_chunks(&align);
    let pairs = align.iter().enumerate().filter_map(|(i, j)| j.map(|j| (i, j))).collect();
    Alignment { pairs, chunks, exhaustive: space <= exhaustive_limit }
}

/// Depth-first walk over all injections of every class, calling `leaf` with
/// the completed candidate-to-reference map.
fn walk(
    classes: &[Class],
    class_idx: usize,
    slot: usize,
    used: &mut [Vec<bool>],
    align: &mut Vec<Option<usize>>,
    leaf: &mut dyn FnMut(&mut Vec<Option<usize>>),
) {
    if class_idx == classes.len() {
        leaf(align);
        return;
    }
    let class = &classes[class_idx];
    let cand_small = class.cand.len() <= class.refs.len();
    let (small, large) = if cand_small { (&class.cand, &class.refs) } else { (&class.refs, &class.cand) };
    if slot == small.len() {
        walk(classes, class_idx + 1, 0, used, align, leaf);
        return;
    }
    for k in 0..large.len() {
        if used[class_idx][k] {
            continue;
        }
        used[class_idx][k] = true;
        let (ci, rj) = if cand_small { (small[slot], large[k]) } else { (large[k], small[slot]) };
        align[ci] = Some(rj);
        walk(classes, class_idx, slot + 1, used, align, leaf);
        align[ci] = None;
        used[class_idx][k] = false;
    }
}

fn used_flags(classes: &[Class]) -> Vec<Vec<bool>> {
    classes
        .iter()
        .map(|c| vec![false; c.cand.len().max(c.refs.len())])
        .collect()
}

fn exhaustive_alignment(
    n_cand: usize,
    n_ref: usize,
    exact: &[Class],
    cand_stems: &[String],
    ref_stems: &[String],
) -> Vec<Option<usize>> {
    let mut best: Option<(usize, Vec<Option<usize>>)> = None;
    let mut align = vec![None; n_cand];
    let mut used = used_flags(exact);
    walk(exact, 0, 0, &mut used, &mut align, &mut |stage_one| {
        let mut ref_taken = vec![false; n_ref];
        for j in stage_one.iter().flatten() {
            ref_taken[*j] = true;
        }
        let stem_classes = classes_by_key(
            (0..n_cand).filter(|&i| stage_one[i].is_none()).map(|i| (i, cand_stems[i].as_str())),
            (0..n_ref).filter(|&j| !ref_taken[j]).map(|j| (j, ref_stems[j].as_str())),
        );
        let mut stem_used = used_flags(&stem_classes);
        walk(&stem_classes, 0, 0, &mut stem_used, stage_one, &mut |full| {
            let chunks = count_chunks(full);
            if best.as_ref().is_none_or(|(b, _)| chunks < *b) {
                best = Some((chunks, full.clone()));
            }
        });
    });
    best.map(|(_, a)| a).unwrap_or_else(|| vec![None; n_cand])
}

fn greedy_alignment(
    candidate: &[String],
    reference: &[String],
    cand_stems: &[String],
    ref_stems: &[String],
) -> Vec<Option<usize>> {
    let mut align: Vec<Option<usize>> = vec![None; candidate.len()];
    let mut ref_taken = vec![false; reference.len()];
    greedy_stage(candidate, reference, &mut align, &mut ref_taken);
    greedy_stage(cand_stems, ref_stems, &mut align, &mut ref_taken);
    align
}

/// Left to right; each unmatched candidate token takes the reference slot right
/// after its predecessor's match when compatible, else the leftmost free one.
fn greedy_stage(keys_c: &[String], keys_r: &[String], align: &mut [Option<usize>], ref_taken: &mut [bool]) {
    for i in 0..keys_c.len() {
        if align[i].is_some() {
            continue;
        }
        let wanted = &keys_c[i];
        let extend = i
            .checked_sub(1)
            .and_then(|p| align[p])
            .map(|pj| pj + 1)
            .filter(|&j| j < keys_r.len() && !ref_taken[j] && &keys_r[j] == wanted);
        let pick = extend.or_else(|| (0..keys_r.len()).find(|&j| !ref_taken[j] && &keys_r[j] == wanted));
        if let Some(j) = pick {
            align[i] = Some(j);
            ref_taken[j] = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tokenize;

    fn score(c: &str, r: &str) -> MeteorScore {
        meteor_with(&tokenize(c), &tokenize(r), &MeteorParams::default(), EXHAUSTIVE_ALIGNMENT_LIMIT)
    }

    #[test]
    fn no_overlap_is_zero() {
        assert_eq!(score("benign skin", "invasive carcinoma").score, 0.0);
    }

    #[test]
    fn identical_four_tokens() {
        let s = score("chronic active colitis present", "chronic active colitis present");
        assert_eq!(s.alignment.pairs.len(), 4);
        assert_eq!(s.alignment.chunks, 1);
        assert_eq!(s.penalty, 0.0078125);
        assert_eq!(s.score, 0.9921875);
    }

    #[test]
    fn single_token_identity() {
        let s = score("benign", "benign");
        assert_eq!(s.penalty, 0.5);
        assert_eq!(s.score, 0.5);
    }

    #[test]
    fn stem_stage_matches_inflections() {
        let s = score("polyps", "polyp");
        assert_eq!(s.alignment.pairs, vec![(0, 0)]);
    }

    #[test]
    fn repeated_tokens_choose_fewest_chunks() {
        // "a b" appears twice in the reference; pairing the second "a" with the
        // second occurrence keeps one chunk.
        let s = score("x a b", "a b x a b");
        assert_eq!(s.alignment.pairs.len(), 3);
        assert_eq!(s.alignment.chunks, 1);
    }

    #[test]
    fn greedy_fallback_used_beyond_limit() {
        let c = tokenize("a a a b b b");
        let r = tokenize("b b b a a a");
        let ex = meteor_with(&c, &r, &MeteorParams::default(), EXHAUSTIVE_ALIGNMENT_LIMIT);
        let greedy = meteor_with(&c, &r, &MeteorParams::default(), 1);
        assert!(ex.alignment.exhaustive);
        assert!(!greedy.alignment.exhaustive);
        assert_eq!(greedy.alignment.pairs.len(), ex.alignment.pairs.len());
        assert!(greedy.alignment.chunks >= ex.alignment.chunks);
        assert_eq!(ex.alignment.chunks, 2);
    }
}
