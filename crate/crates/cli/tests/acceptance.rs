//! Acceptance suite. Each criterion prints one PASS or FAIL line; the process
//! exits non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rust_stemmers::{Algorithm, Stemmer};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use slidereport_core::baselines::{
    build_ssllm_prompt, parse_ssllm_prompt, select_icl_examples, ss_llm_select, ss_random, IclExample,
    SelectionFlag, ValidationPart, SSLLM_HEADER,
};
use slidereport_core::dataset::{split_dataset, Case, Part, ReportSection, Split};
use slidereport_core::generation::{GeneratedText, GenerationBackend, GenerationError, GenerationRequest};
use slidereport_core::metrics::{meteor, rouge_l, tokenize};
use slidereport_core::packer::{pack_part, PackError, PatchLoader, ToyEncoder};
use slidereport_core::raster::RgbRaster;
use slidereport_core::stats::{
    bootstrap_ci, preference_category, preference_summary, wilcoxon_signed_rank, ExclusionRule, PreferenceScope,
    RatingRecord, Score, StatsError, TextSource,
};
use slidereport_core::tiler::{
    compute_tissue_mask, extract_patches, load_slide, tile_slide, EdgePolicy, MaskParams, Patch, PatchConfig,
    PatchRecord, PatchSequence, TissueMask,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("{what} took {took:.1?}, limit {limit:?}"))
}

// ---------------------------------------------------------------------------
// NLG metric oracles

fn lcs_oracle(a: &[String], b: &[String]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] { t[i - 1][j - 1] + 1 } else { t[i - 1][j].max(t[i][j - 1]) };
        }
    }
    t[a.len()][b.len()]
}

fn rouge_oracle(c: &[String], r: &[String]) -> (f64, f64, f64) {
    let l = lcs_oracle(c, r) as f64;
    let p = if c.is_empty() { 0.0 } else { l / c.len() as f64 };
    let rec = if r.is_empty() { 0.0 } else { l / r.len() as f64 };
    let f = if p + rec == 0.0 { 0.0 } else { 2.0 * p * rec / (p + rec) };
    (p, rec, f)
}

/// Counts of each key, used for the maximum matching size per stage.
fn multiset<'a>(items: impl Iterator<Item = &'a str>) -> HashMap<&'a str, usize> {
    let mut m = HashMap::new();
    for k in items {
        *m.entry(k).or_insert(0) += 1;
    }
    m
}

struct MeteorSearch<'a> {
    cand: &'a [String],
    refs: &'a [String],
    cand_stem: Vec<String>,
    ref_stem: Vec<String>,
    max_exact: usize,
    max_stem: usize,
    best_chunks: usize,
}

impl MeteorSearch<'_> {
    /// Depth-first over candidate positions: leave unmatched, or pair with an
    /// unused reference token that is identical (exact) or shares a stem.
    fn dfs(&mut self, i: usize, used: u64, exact: usize, stem: usize, chunks: usize, last: Option<(usize, usize)>) {
        if chunks >= self.best_chunks {
            return;
        }
        let remaining = self.cand.len() - i;
        if exact + stem + remaining < self.max_exact + self.max_stem || exact + remaining < self.max_exact {
            return;
        }
        if i == self.cand.len() {
            if exact == self.max_exact && stem == self.max_stem {
                self.best_chunks = chunks;
            }
            return;
        }
        for j in 0..self.refs.len() {
            if used & (1 << j) != 0 {
                continue;
            }
            let is_exact = self.cand[i] == self.refs[j];
            let is_stem = !is_exact && self.cand_stem[i] == self.ref_stem[j];
            if !is_exact && !is_stem {
                continue;
            }
            let extends = last == Some((i.wrapping_sub(1), j.wrapping_sub(1))) && i > 0 && j > 0;
            let c = if extends { chunks } else { chunks + 1 };
            self.dfs(i + 1, used | (1 << j), exact + usize::from(is_exact), stem + usize::from(is_stem), c, Some((i, j)));
        }
        self.dfs(i + 1, used, exact, stem, chunks, last);
    }
}

/// METEOR from its definition: exact stage then stem stage, each of maximum
/// size, with the chunk count minimized over every such alignment.
fn meteor_oracle(c: &[String], r: &[String], stemmer: &Stemmer) -> f64 {
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let cm = multiset(c.iter().map(String::as_str));
    let rm = multiset(r.iter().map(String::as_str));
    let max_exact: usize = cm.iter().map(|(k, n)| (*n).min(*rm.get(k).unwrap_or(&0))).sum();
    let mut cand_left: HashMap<String, usize> = HashMap::new();
    let mut ref_left: HashMap<String, usize> = HashMap::new();
    for (k, n) in &cm {
        let left = n - (*n).min(*rm.get(k).unwrap_or(&0));
        *cand_left.entry(stemmer.stem(k).into_owned()).or_insert(0) += left;
    }
    for (k, n) in &rm {
        let left = n - (*n).min(*cm.get(k).unwrap_or(&0));
        *ref_left.entry(stemmer.stem(k).into_owned()).or_insert(0) += left;
    }
    let max_stem: usize = cand_left.iter().map(|(k, n)| (*n).min(*ref_left.get(k).unwrap_or(&0))).sum();
    let m = max_exact + max_stem;
    if m == 0 {
        return 0.0;
    }
    let mut search = MeteorSearch {
        cand: c,
        refs: r,
        cand_stem: c.iter().map(|t| stemmer.stem(t).into_owned()).collect(),
        ref_stem: r.iter().map(|t| stemmer.stem(t).into_owned()).collect(),
        max_exact,
        max_stem,
        best_chunks: usize::MAX,
    };
    search.dfs(0, 0, 0, 0, 0, None);
    let chunks = search.best_chunks as f64;
    let m = m as f64;
    let p = m / c.len() as f64;
    let rec = m / r.len() as f64;
    let fmean = 10.0 * p * rec / (rec + 9.0 * p);
    fmean * (1.0 - 0.5 * (chunks / m).powi(3))
}

const VOCAB: [&str; 44] = [
    "acute", "chronic", "mild", "benign", "negative", "for", "malignancy", "squamous", "mucosa", "adenoma",
    "tubular", "identified", "present", "focal", "grade", "high", "low", "carcinoma", "carcinomas", "cell",
    "cells", "margin", "margins", "involve", "involved", "involving", "tumor", "tumors", "lesion", "lesions",
    "biopsy", "biopsies", "gastritis", "colitis", "metaplasia", "intestinal", "the", "of", "with", "and", "no",
    "is", "dysplasia", "basal",
];

/// Product over matching classes of the number of injections; bounds the oracle's work.
fn alignment_space(c: &[String], r: &[String], stemmer: &Stemmer) -> f64 {
    let key = |t: &String| stemmer.stem(t).into_owned();
    let cm = multiset(c.iter().map(String::as_str));
    let rm = multiset(r.iter().map(String::as_str));
    let mut space = 1.0f64;
    for (k, n) in &cm {
        if let Some(m) = rm.get(k) {
            let (small, large) = if n < m { (*n, *m) } else { (*m, *n) };
            space *= (0..small).map(|i| (large - i) as f64).product::<f64>();
        }
    }
    // stem classes can only be larger than the leftovers; bound with all occurrences
    let cs: HashMap<String, usize> = c.iter().fold(HashMap::new(), |mut m, t| {
        *m.entry(key(t)).or_insert(0) += 1;
        m
    });
    let rs: HashMap<String, usize> = r.iter().fold(HashMap::new(), |mut m, t| {
        *m.entry(key(t)).or_insert(0) += 1;
        m
    });
    for (k, n) in &cs {
        if let Some(m) = rs.get(k) {
            let (small, large) = if n < m { (*n, *m) } else { (*m, *n) };
            space *= (0..small).map(|i| (large - i) as f64).product::<f64>();
        }
    }
    space
}

fn random_tokens(rng: &mut ChaCha8Rng, len: usize) -> Vec<String> {
    (0..len).map(|_| VOCAB[rng.random_range(0..VOCAB.len())].to_string()).collect()
}

/// Reference derived from the candidate by deletions, insertions, swaps and inflection changes.
fn mutate(rng: &mut ChaCha8Rng, c: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for t in c {
        match rng.random_range(0..10) {
            0 => {}
            1 => out.push(VOCAB[rng.random_range(0..VOCAB.len())].to_string()),
            2 => {
                out.push(t.clone());
                out.push(VOCAB[rng.random_range(0..VOCAB.len())].to_string());
            }
            3 => out.push(match t.strip_suffix('s') {
                Some(stem) => stem.to_string(),
                None => format!("{t}s"),
            }),
            _ => out.push(t.clone()),
        }
    }
    if out.len() > 2 && rng.random_bool(0.3) {
        let i = rng.random_range(0..out.len() - 1);
        out.swap(i, i + 1);
    }
    out.truncate(40);
    out
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let stemmer = Stemmer::create(Algorithm::English);
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();

    let r = rouge_l(&s(&["acute", "esophagitis", "with", "fungal", "elements"]), &s(&["acute", "esophagitis"]));
    ensure((r.precision - 0.4).abs() < 1e-12 && r.recall == 1.0 && (r.f - 4.0 / 7.0).abs() < 1e-12, || {
        format!("hand rouge example gave {r:?}")
    })?;
    let four = s(&["benign", "squamous", "mucosa", "present"]);
    ensure(meteor(&four, &four) == 0.9921875, || format!("identical 4 tokens: {}", meteor(&four, &four)))?;
    ensure(meteor(&s(&["benign"]), &s(&["benign"])) == 0.5, || "single identical token is not 0.5".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut checked = 0;
    let mut attempts = 0;
    let mut worst = 0.0f64;
    while checked < 300 {
        attempts += 1;
        ensure(attempts < 5000, || "generator rejected too many pairs".into())?;
        let len = rng.random_range(0..=40);
        let c = random_tokens(&mut rng, len);
        let r = if rng.random_bool(0.6) { mutate(&mut rng, &c) } else {
            let n = rng.random_range(0..=40);
            random_tokens(&mut rng, n)
        };
        if alignment_space(&c, &r, &stemmer) > 2e5 {
            continue;
        }
        let got = rouge_l(&c, &r);
        let (p, rec, f) = rouge_oracle(&c, &r);
        let dm = (meteor(&c, &r) - meteor_oracle(&c, &r, &stemmer)).abs();
        let dr = (got.precision - p).abs().max((got.recall - rec).abs()).max((got.f - f).abs());
        worst = worst.max(dm).max(dr);
        ensure(dr <= 1e-9, || format!("rouge mismatch {got:?} vs ({p}, {rec}, {f}) on {c:?} / {r:?}"))?;
        ensure(dm <= 1e-9, || {
            format!("meteor mismatch {} vs {} on {c:?} / {r:?}", meteor(&c, &r), meteor_oracle(&c, &r, &stemmer))
        })?;
        checked += 1;
    }
    within(start, Duration::from_secs(10), "metric oracle suite")?;
    Ok(format!("3 hand examples, {checked} random pairs, max deviation {worst:.1e}, {:.1?}", start.elapsed()))
}

// ---------------------------------------------------------------------------
// Wilcoxon exactness

/// Mid-ranks by direct counting, then the two-sided p by full sign enumeration.
fn wilcoxon_oracle(d: &[f64]) -> Option<(f64, f64)> {
    let nz: Vec<f64> = d.iter().copied().filter(|x| *x != 0.0).collect();
    if nz.is_empty() {
        return None;
    }
    let abs: Vec<f64> = nz.iter().map(|x| x.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|a| {
            let less = abs.iter().filter(|b| *b < a).count() as f64;
            let equal = abs.iter().filter(|b| *b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let w: f64 = nz.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let n = nz.len();
    let observed = (w - total / 2.0).abs();
    let mut extreme = 0u64;
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
        if (s - total / 2.0).abs() >= observed {
            extreme += 1;
        }
    }
    Some((w, extreme as f64 / (1u64 << n) as f64))
}

fn wilcoxon_exactness() -> Outcome {
    let start = Instant::now();
    let six = wilcoxon_signed_rank(&[1.5, 0.5, 2.0, 1.0, 3.0, 2.5]).map_err(|e| e.to_string())?;
    ensure(six.p_two_sided == 0.03125, || format!("n=6 all positive gave p={}", six.p_two_sided))?;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut with_ties = 0;
    for case in 0..500 {
        let n = rng.random_range(1..=12);
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(-4i32..=4) as f64 * 0.5).collect();
        let got = wilcoxon_signed_rank(&d);
        match (wilcoxon_oracle(&d), got) {
            (None, Err(StatsError::Degenerate)) => {}
            (Some((w, p)), Ok(r)) => {
                ensure(r.statistic == w && r.p_two_sided.to_bits() == p.to_bits(), || {
                    format!("case {case} {d:?}: got W+={} p={}, oracle W+={w} p={p}", r.statistic, r.p_two_sided)
                })?;
                let abs: BTreeSet<u64> = d.iter().filter(|x| **x != 0.0).map(|x| x.abs().to_bits()).collect();
                with_ties += usize::from(abs.len() < d.iter().filter(|x| **x != 0.0).count());
            }
            (o, g) => return Err(format!("case {case} {d:?}: oracle {o:?}, implementation {g:?}")),
        }
    }
    within(start, Duration::from_secs(30), "wilcoxon suite")?;
    Ok(format!("500 inputs bit-equal ({with_ties} with ties), n=6 p=0.03125, {:.1?}", start.elapsed()))
}

// ---------------------------------------------------------------------------
// Bootstrap behavior

fn bootstrap_behavior() -> Outcome {
    let start = Instant::now();
    let flat = bootstrap_ci(&[4.0; 104], 10_000, 0.95, 3).map_err(|e| e.to_string())?;
    ensure(flat.lo == 4.0 && flat.hi == 4.0, || format!("constant input gave {flat:?}"))?;
    let truth = 4.11;
    let normal = Normal::new(truth, 0.5).expect("valid normal");
    let mut covered = 0;
    for trial in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000_000 + trial);
        let sample: Vec<f64> = (0..104).map(|_| normal.sample(&mut rng)).collect();
        let ci = bootstrap_ci(&sample, 10_000, 0.95, trial).map_err(|e| e.to_string())?;
        covered += usize::from(ci.contains(truth));
    }
    let coverage = covered as f64 / 1000.0;
    ensure((0.93..=0.97).contains(&coverage), || format!("coverage {coverage}"))?;
    within(start, Duration::from_secs(300), "bootstrap suite")?;
    Ok(format!("zero-width degenerate CI, coverage {coverage:.3} over 1000 trials, {:.1?}", start.elapsed()))
}

// ---------------------------------------------------------------------------
// Preference mapping

/// Rows: text 1 score 1..5, columns: text 2 score 1..5.
const PREFERENCE_TABLE: [[&str; 5]; 5] = [
    ["BOTH_WITH_ERRORS", "BOTH_WITH_ERRORS", "BOTH_WITH_ERRORS", "TEXT2_PREFERRED", "TEXT2_PREFERRED"],
    ["BOTH_WITH_ERRORS", "BOTH_WITH_ERRORS", "BOTH_WITH_ERRORS", "TEXT2_PREFERRED", "TEXT2_PREFERRED"],
    ["BOTH_WITH_ERRORS", "BOTH_WITH_ERRORS", "BOTH_WITH_ERRORS", "TEXT2_PREFERRED", "TEXT2_PREFERRED"],
    ["TEXT1_PREFERRED", "TEXT1_PREFERRED", "TEXT1_PREFERRED", "BOTH_OK_SAME", "BOTH_OK_TEXT2"],
    ["TEXT1_PREFERRED", "TEXT1_PREFERRED", "TEXT1_PREFERRED", "BOTH_OK_TEXT1", "BOTH_OK_SAME"],
];

fn rating(part: &str, rater: &str, source: TextSource, score: u8) -> RatingRecord {
    RatingRecord {
        part_id: part.into(),
        rater_id: rater.into(),
        text_source: source,
        score: Score::Rated(score),
        comment: String::new(),
    }
}

fn preference_mapping() -> Outcome {
    for r1 in 1..=5u8 {
        for r2 in 1..=5u8 {
            let got = preference_category(r1, r2).map_err(|e| e.to_string())?.as_str();
            let want = PREFERENCE_TABLE[r1 as usize - 1][r2 as usize - 1];
            ensure(got == want, || format!("({r1}, {r2}) mapped to {got}, table says {want}"))?;
        }
    }
    ensure(preference_category(0, 3).is_err() && preference_category(3, 6).is_err(), || "out-of-range accepted".into())?;

    use TextSource::{MultiSlide as M, Original as O};
    // p1: rater b scores both texts 3 -> dropped for both raters.
    // p2: (3, 4) and (4, 3) never both low -> kept. p3: both ok -> kept.
    // p4: a single 3 next to a 5 -> kept. p5: (2, 1) by rater a -> dropped.
    let ratings = vec![
        rating("p1", "a", M, 5),
        rating("p1", "a", O, 5),
        rating("p1", "b", M, 3),
        rating("p1", "b", O, 3),
        rating("p2", "a", M, 3),
        rating("p2", "a", O, 4),
        rating("p2", "b", M, 4),
        rating("p2", "b", O, 3),
        rating("p3", "a", M, 4),
        rating("p3", "a", O, 5),
        rating("p3", "b", M, 5),
        rating("p3", "b", O, 5),
        rating("p4", "a", M, 5),
        rating("p4", "a", O, 3),
        rating("p5", "a", M, 2),
        rating("p5", "a", O, 1),
        rating("p5", "b", M, 5),
        rating("p5", "b", O, 4),
    ];
    let scope = PreferenceScope::default();
    let s = preference_summary(&ratings, (M, O), ExclusionRule::AnyRaterBothLow, &scope, 2000, 0.95, 1)
        .map_err(|e| e.to_string())?;
    ensure(s.excluded_parts == ["p1", "p5"], || format!("excluded {:?}", s.excluded_parts))?;
    ensure(s.n_parts == 3 && s.n_units == 5, || format!("kept {} parts, {} units", s.n_parts, s.n_units))?;
    // units: p2a TEXT2_PREFERRED, p2b TEXT1_PREFERRED, p3a BOTH_OK_TEXT2, p3b SAME, p4a TEXT1_PREFERRED
    ensure((s.at_least_as_good - 3.0 / 5.0).abs() < 1e-12, || format!("at least as good {}", s.at_least_as_good))?;
    let total: f64 = s.proportions.values().sum();
    ensure((total - 1.0).abs() < 1e-12, || format!("proportions sum {total}"))?;

    let by_rater = PreferenceScope { parts: None, rater: Some("b".into()) };
    let b = preference_summary(&ratings, (M, O), ExclusionRule::AnyRaterBothLow, &by_rater, 2000, 0.95, 1)
        .map_err(|e| e.to_string())?;
    ensure(b.n_units == 2 && b.excluded_parts == ["p1", "p5"], || {
        format!("rater b: {} units, excluded {:?}", b.n_units, b.excluded_parts)
    })?;
    let all = preference_summary(&ratings, (M, O), ExclusionRule::None, &scope, 2000, 0.95, 1).map_err(|e| e.to_string())?;
    ensure(all.n_parts == 5 && all.n_units == 9 && all.excluded_parts.is_empty(), || "no-exclusion run dropped parts".into())?;
    Ok("25 score pairs match the table, exclusion drops exactly the both-low parts for all raters".into())
}

// ---------------------------------------------------------------------------
// Tiler invariants

fn blob_raster(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RgbRaster {
    let blobs: Vec<(f64, f64, f64)> = (0..rng.random_range(0..4))
        .map(|_| {
            (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64), rng.random_range(10.0..(w.max(h) as f64)))
        })
        .collect();
    RgbRaster::from_fn(w, h, |x, y| {
        let inside = blobs.iter().any(|(cx, cy, r)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r);
        if inside {
            [215, 130, 185]
        } else {
            [246, 245, 247]
        }
    })
}

/// Tissue share of a tile footprint by counting pixels.
fn fraction_oracle(mask: &TissueMask, x0: usize, y0: usize, size: usize) -> f64 {
    let mut n = 0usize;
    for y in y0..(y0 + size).min(mask.level_height) {
        for x in x0..(x0 + size).min(mask.level_width) {
            n += usize::from(mask.at_pixel(x, y));
        }
    }
    n as f64 / (size * size) as f64
}

fn check_sequence(seq: &PatchSequence, raster: &RgbRaster, mask: &TissueMask, cfg: &PatchConfig) -> Result<(), String> {
    let size = cfg.patch_size;
    let keys: Vec<(usize, usize)> = seq.records().map(|r| (r.row, r.col)).collect();
    ensure(keys.windows(2).all(|w| w[0] < w[1]), || "patches not in strict row-major order".into())?;
    let (cols, rows) = match cfg.edge {
        EdgePolicy::Drop => (raster.width() / size, raster.height() / size),
        EdgePolicy::Pad => (raster.width().div_ceil(size), raster.height().div_ceil(size)),
    };
    let emitted: BTreeSet<(usize, usize)> = keys.iter().copied().collect();
    for row in 0..rows {
        for col in 0..cols {
            let f = fraction_oracle(mask, col * size, row * size, size);
            let want = f >= cfg.min_tissue_fraction;
            ensure(want == emitted.contains(&(row, col)), || {
                format!("tile ({row},{col}) fraction {f} threshold {} emitted={}", cfg.min_tissue_fraction, !want)
            })?;
        }
    }
    for p in &seq.patches {
        let r = &p.record;
        // a grid origin makes footprints disjoint
        ensure(r.origin == (r.col * size, r.row * size) && r.size == size, || format!("bad origin {r:?}"))?;
        ensure(r.row < rows && r.col < cols, || format!("tile outside grid {r:?}"))?;
        ensure((r.tissue_fraction - fraction_oracle(mask, r.origin.0, r.origin.1, size)).abs() < 1e-12, || {
            format!("fraction mismatch {r:?}")
        })?;
        let px = p.pixels.as_ref().ok_or("patch without pixels")?;
        ensure(px.width() == size && px.height() == size, || "wrong patch shape".into())?;
        for (dx, dy) in [(0, 0), (size - 1, 0), (0, size - 1), (size - 1, size - 1), (size / 2, size / 3)] {
            let (x, y) = (r.origin.0 + dx, r.origin.1 + dy);
            let want = if x < raster.width() && y < raster.height() { raster.pixel(x, y) } else { [255, 255, 255] };
            ensure(px.pixel(dx, dy) == want, || format!("pixel ({x},{y}) of {r:?} differs"))?;
        }
    }
    Ok(())
}

fn tiler_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut total = 0;
    for case in 0..100 {
        let (w, h) = (rng.random_range(1..400), rng.random_range(1..400));
        let raster = blob_raster(&mut rng, w, h);
        let downsample = [1, 2, 4, 8, 16][rng.random_range(0..5)];
        let mask = if case % 2 == 0 {
            compute_tissue_mask(&raster, &MaskParams { downsample, ..MaskParams::default() })
        } else {
            let cells = w.div_ceil(downsample) * h.div_ceil(downsample);
            let p = rng.random_range(0.0..1.0);
            TissueMask::from_cells(w, h, downsample, (0..cells).map(|_| rng.random_bool(p)).collect())
        };
        let cfg = PatchConfig {
            patch_size: rng.random_range(8..160),
            min_tissue_fraction: [0.0, 0.1, 0.25, 0.5, 1.0][rng.random_range(0..5)],
            edge: if rng.random_bool(0.5) { EdgePolicy::Drop } else { EdgePolicy::Pad },
            ..PatchConfig::default()
        };
        let seq = extract_patches("s", &raster, &mask, &cfg).map_err(|e| e.to_string())?;
        check_sequence(&seq, &raster, &mask, &cfg).map_err(|e| format!("case {case} ({w}x{h}, {cfg:?}): {e}"))?;
        let again = extract_patches("s", &raster, &mask, &cfg).map_err(|e| e.to_string())?;
        ensure(seq == again, || format!("case {case}: second run differs"))?;
        total += seq.len();
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    RgbRaster::filled(1536, 1536, [210, 120, 180]).save(&dir.path().join("l0.png")).map_err(|e| e.to_string())?;
    let manifest = r#"{"slide_id":"square","stain":"H&E","levels":[{"mpp":1.0,"width":1536,"height":1536,"image":"l0.png"}]}"#;
    std::fs::write(dir.path().join("manifest.json"), manifest).map_err(|e| e.to_string())?;
    let slide = load_slide(&dir.path().join("manifest.json")).map_err(|e| e.to_string())?;
    let seq = tile_slide(&slide, &PatchConfig::default()).map_err(|e| e.to_string())?;
    let got: Vec<(usize, usize, (usize, usize))> = seq.records().map(|r| (r.row, r.col, r.origin)).collect();
    let want = vec![(0, 0, (0, 0)), (0, 1, (0, 768)), (1, 0, (768, 0)), (1, 1, (768, 768))];
    let want: Vec<_> = want.into_iter().map(|(r, c, (y, x))| (r, c, (x, y))).collect();
    ensure(got == want, || format!("1536 square gave {got:?}"))?;
    Ok(format!("100 fuzzed cases ({total} patches) hold, 1536 square gives 4 ordered patches"))
}

// ---------------------------------------------------------------------------
// Packing stress

struct SyntheticLoader {
    rasters: Vec<RgbRaster>,
}

impl PatchLoader for SyntheticLoader {
    fn load(&self, record: &PatchRecord) -> Result<RgbRaster, PackError> {
        Ok(self.rasters[(record.row * 31 + record.col) % self.rasters.len()].clone())
    }
}

fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn packing_stress() -> Outcome {
    const N_PATCHES: usize = 41_000;
    const N_SLIDES: usize = 50;
    const _: () = assert!(N_PATCHES.is_multiple_of(N_SLIDES));
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let rasters = (0..8).map(|_| blob_raster(&mut rng, 768, 768)).collect();
    let loader = SyntheticLoader { rasters };
    let slide_ids: Vec<String> = (0..N_SLIDES).map(|i| format!("big-s{i:02}")).collect();
    let mut per_slide = BTreeMap::new();
    for id in &slide_ids {
        let n = N_PATCHES / N_SLIDES;
        let patches = (0..n)
            .map(|k| Patch {
                record: PatchRecord {
                    slide_id: id.clone(),
                    row: k / 30,
                    col: k % 30,
                    origin: ((k % 30) * 768, (k / 30) * 768),
                    size: 768,
                    tissue_fraction: 1.0,
                },
                pixels: None,
            })
            .collect();
        per_slide.insert(id.clone(), PatchSequence::new(id.clone(), patches).map_err(|e| e.to_string())?);
    }
    let label = "lung, right upper lobe, wedge resection";
    let prompt_estimate = label.split(' ').filter(|w| !w.is_empty()).count();
    let encoder = ToyEncoder::new(64, 5).map_err(|e| e.to_string())?;

    let tight = pack_part("big", &slide_ids, &per_slide, label, N_PATCHES + prompt_estimate - 1, &encoder, &loader);
    ensure(matches!(tight, Err(PackError::BudgetExceeded { .. })), || "over-budget part was packed".into())?;

    let packed = pack_part("big", &slide_ids, &per_slide, label, 1_000_000, &encoder, &loader).map_err(|e| e.to_string())?;
    ensure(packed.tokens.len() == N_PATCHES, || format!("{} tokens", packed.tokens.len()))?;
    ensure(packed.budget.used == N_PATCHES + prompt_estimate, || {
        format!("budget used {} != {} + {prompt_estimate}", packed.budget.used, N_PATCHES)
    })?;
    ensure(packed.tokens.iter().all(|t| t.vector.len() == 64 && t.vector.iter().all(|v| v.is_finite())), || {
        "token of wrong width or non-finite".into()
    })?;
    let order_ok = packed.slide_boundaries.len() == N_SLIDES
        && packed.tokens.iter().zip(per_slide.values().flat_map(|s| s.records())).all(|(t, r)| {
            t.patch_ref.slide_id == r.slide_id && t.patch_ref.row == r.row && t.patch_ref.col == r.col
        });
    ensure(order_ok, || "token order does not follow slides then row-major patches".into())?;
    let peak = peak_rss_bytes().ok_or("VmHWM unavailable")?;
    ensure(peak < 2 * 1024 * 1024 * 1024, || format!("peak memory {} MiB", peak >> 20))?;
    within(start, Duration::from_secs(300), "packing stress")?;
    Ok(format!(
        "{N_PATCHES} patches, {} tokens used of 1M, peak {} MiB, {:.1?}",
        packed.budget.used,
        peak >> 20,
        start.elapsed()
    ))
}

// ---------------------------------------------------------------------------
// Split integrity

fn synthetic_part(case: &str, k: usize, n_slides: usize) -> Part {
    Part {
        case_id: case.into(),
        part_id: format!("{case}-{k}"),
        slide_ids: (0..n_slides).map(|i| format!("{case}-{k}-s{i}")).collect(),
        section: ReportSection::new("skin, biopsy", "benign skin."),
        tissue: None,
        severity: None,
    }
}

fn split_integrity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let cases: Vec<Case> = (0..10_000)
        .map(|c| {
            let id = format!("c{c:05}");
            let parts = (0..rng.random_range(1..=4))
                .map(|k| {
                    let n = match rng.random_range(0..10) {
                        0..=4 => 1,
                        5..=7 => rng.random_range(2..=5),
                        8 => rng.random_range(6..=9),
                        _ => rng.random_range(10..=40),
                    };
                    synthetic_part(&id, k, n)
                })
                .collect();
            Case { case_id: id, parts }
        })
        .collect();
    let mut pinned = BTreeMap::new();
    for i in 0..60 {
        pinned.insert(format!("c{:05}", i * 97), Split::ALL[i % 3]);
    }
    let a = split_dataset(&cases, [0.7, 0.2, 0.1], 99, &pinned).map_err(|e| e.to_string())?;
    let b = split_dataset(&cases, [0.7, 0.2, 0.1], 99, &pinned).map_err(|e| e.to_string())?;
    ensure(a == b, || "split is not deterministic".into())?;
    for (k, s) in &pinned {
        ensure(a.split_of(k) == Some(*s), || format!("pinned case {k} moved"))?;
    }
    // every part inherits its case's split, so a case spans several splits only if
    // the case is missing or listed under several ids
    let mut parts_per_split = [[0usize; 4]; 3];
    let mut totals = [0usize; 4];
    let known: BTreeSet<&str> = cases.iter().map(|c| c.case_id.as_str()).collect();
    ensure(a.assignment.len() == cases.len() && a.assignment.keys().all(|k| known.contains(k.as_str())), || {
        "assignment does not cover exactly the input cases".into()
    })?;
    for c in &cases {
        let s = a.split_of(&c.case_id).ok_or("unassigned case")?;
        let splits: BTreeSet<Split> = c.parts.iter().map(|_| s).collect();
        ensure(splits.len() == 1, || format!("case {} spans splits", c.case_id))?;
        for p in &c.parts {
            let cat = match p.slide_ids.len() {
                1 => 0,
                2..=5 => 1,
                6..=9 => 2,
                _ => 3,
            };
            parts_per_split[s as usize][cat] += 1;
            totals[cat] += 1;
        }
    }
    let all: usize = totals.iter().sum();
    let mut worst = 0.0f64;
    for (s, want) in [0.7, 0.2, 0.1].iter().enumerate() {
        let share = parts_per_split[s].iter().sum::<usize>() as f64 / all as f64;
        worst = worst.max((share - want).abs());
        for cat in 0..4 {
            let share = parts_per_split[s][cat] as f64 / totals[cat] as f64;
            worst = worst.max((share - want).abs());
        }
    }
    ensure(worst <= 0.02, || format!("part share off by {worst:.4}"))?;
    Ok(format!("10000 cases, {all} parts, no case spans splits, max share deviation {worst:.4}, pins kept"))
}

// ---------------------------------------------------------------------------
// Baseline contracts

struct CountingBackend {
    calls: std::sync::atomic::AtomicUsize,
}

impl GenerationBackend for CountingBackend {
    fn id(&self) -> &str {
        "counting"
    }

    fn generate(&self, _req: &GenerationRequest) -> Result<GeneratedText, GenerationError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        Ok(GeneratedText::new("unused<END>".into(), "counting", 0))
    }
}

fn avg_oracle(c: &str, r: &str, stemmer: &Stemmer) -> f64 {
    let (c, r) = (tokenize(c), tokenize(r));
    (rouge_oracle(&c, &r).2 + meteor_oracle(&c, &r, stemmer)) / 2.0
}

fn baseline_contracts() -> Outcome {
    let part = synthetic_part("chi", 0, 10);
    let mut counts = [0u64; 10];
    for seed in 0..100_000u64 {
        let s = ss_random(&part, seed).map_err(|e| e.to_string())?;
        let i = part.slide_ids.iter().position(|x| *x == s).ok_or("chosen slide not in part")?;
        counts[i] += 1;
    }
    let expected = 10_000.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(9.0).expect("valid df").cdf(chi2);
    ensure(p > 0.01, || format!("chi-square {chi2:.2}, p {p:.4}, counts {counts:?}"))?;
    ensure(ss_random(&part, 7).ok() == ss_random(&part, 7).ok(), || "ss_random not deterministic".into())?;

    let stemmer = Stemmer::create(Algorithm::English);
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let sentence = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(2..9);
        random_tokens(rng, n).join(" ") + "."
    };
    let mut pool = Vec::new();
    for k in 0..40 {
        let truth = sentence(&mut rng);
        let mut notes: Vec<String> = (0..rng.random_range(1..6)).map(|_| sentence(&mut rng)).collect();
        if k % 2 == 0 {
            let near = mutate(&mut rng, &tokenize(&truth)).join(" ");
            let at = rng.random_range(0..=notes.len());
            notes.insert(at, if near.is_empty() { truth.clone() } else { near });
        }
        pool.push(ValidationPart { part_id: format!("v{k}"), notes, ground_truth: truth });
    }
    let icl = select_icl_examples(&pool, 40, 1).map_err(|e| e.to_string())?;
    ensure(icl.len() == 40, || format!("{} examples", icl.len()))?;
    for (ex, part) in icl.iter().zip(&pool) {
        let scores: Vec<f64> = part.notes.iter().map(|n| avg_oracle(n, &part.ground_truth, &stemmer)).collect();
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let first = scores.iter().position(|s| *s == best).expect("non-empty");
        ensure(ex.notes == part.notes && ex.response == part.notes[first], || {
            format!("{}: chose {:?}, argmax is {:?} ({scores:?})", part.part_id, ex.response, part.notes[first])
        })?;
    }

    for trial in 0..200 {
        let examples: Vec<IclExample> = (0..rng.random_range(0..4))
            .map(|_| {
                let notes: Vec<String> = (0..rng.random_range(1..4)).map(|_| sentence(&mut rng)).collect();
                let response = notes[rng.random_range(0..notes.len())].clone();
                IclExample { notes, response }
            })
            .collect();
        let query: Vec<String> = (0..rng.random_range(2..6)).map(|_| sentence(&mut rng)).collect();
        let prompt = build_ssllm_prompt(&query, &examples).map_err(|e| e.to_string())?;
        ensure(prompt.starts_with(SSLLM_HEADER), || "prompt does not open with the selection header".into())?;
        let (ex2, q2) = parse_ssllm_prompt(&prompt).map_err(|e| e.to_string())?;
        ensure(ex2 == examples && q2 == query, || format!("trial {trial}: prompt did not round-trip"))?;
    }

    let backend = CountingBackend { calls: Default::default() };
    let only = vec!["chronic colitis.".to_string()];
    let sel = ss_llm_select("p", &only, &icl, &backend).map_err(|e| e.to_string())?;
    let calls = backend.calls.load(std::sync::atomic::Ordering::SeqCst);
    ensure(sel.selected == only[0] && sel.flags == [SelectionFlag::SingleNote] && calls == 0, || {
        format!("single note: {sel:?}, {calls} calls")
    })?;
    Ok(format!("chi-square p={p:.3}, 40 ICL argmax picks, 200 prompt round-trips, single note without a call"))
}

// ---------------------------------------------------------------------------
// End-to-end smoke

fn run_cli(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_slidereport"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("`slidereport {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let steps: &[&[&str]] = &[
        &["demo-fixture", "--out", "fx", "--seed", "7"],
        &["tile", "--manifest", "fx/slides", "--out", "patches", "--min-tissue", "0.1"],
        &["assemble", "--parts", "fx/parts.jsonl", "--patches", "patches", "--out", "asm", "--seed", "7"],
        &["split", "--parts", "fx/parts.jsonl", "--seed", "7", "--pinned", "fx/pinned.json", "--out", "split.json"],
        &["pack", "--bundles", "asm/bundles.jsonl", "--patches", "patches", "--out", "packed", "--limit", "1000000"],
        &["generate", "--bundles", "asm/bundles.jsonl", "--patches", "patches", "--backend", "stub", "--out", "gen.jsonl"],
        &["baseline", "notes", "--bundles", "asm/bundles.jsonl", "--patches", "patches", "--out", "notes.jsonl"],
        &["baseline", "ss-random", "--bundles", "asm/bundles.jsonl", "--notes", "notes.jsonl", "--seed", "7", "--out", "ssr.jsonl"],
        &[
            "baseline", "build-icl", "--bundles", "asm/bundles.jsonl", "--notes", "notes.jsonl", "--split-file",
            "split.json", "--split", "validation", "--out", "icl.jsonl",
        ],
        &[
            "baseline", "ss-llm", "--bundles", "asm/bundles.jsonl", "--notes", "notes.jsonl", "--icl", "icl.jsonl",
            "--out", "ssl.jsonl",
        ],
        &[
            "rate-synthetic", "--bundles", "asm/bundles.jsonl", "--generations", "gen.jsonl", "ssr.jsonl", "ssl.jsonl",
            "--raters", "2", "--seed", "7", "--journal", "journal", "--out", "ratings.jsonl",
        ],
        &["score", "--candidates", "gen.jsonl", "ssr.jsonl", "ssl.jsonl", "--refs", "asm/bundles.jsonl", "--out", "scores.jsonl"],
        &[
            "analyze", "--ratings", "ratings.jsonl", "--scores", "scores.jsonl", "--parts", "asm/bundles.jsonl",
            "--split", "split.json", "--seed", "7", "--out", "analysis",
        ],
    ];
    for s in steps {
        run_cli(s, d)?;
    }
    let bundles = std::fs::read_to_string(d.join("asm/bundles.jsonl")).map_err(|e| e.to_string())?;
    let categories: BTreeSet<String> = bundles
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).map(|v| v["category"].as_str().unwrap_or("").to_string()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure(categories == ["P1", "P2-5", "P6-9"].iter().map(|s| s.to_string()).collect(), || {
        format!("fixture categories {categories:?}")
    })?;

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("analysis/report.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let mut summaries: Vec<&serde_json::Value> = report["preferences"].as_array().ok_or("no preferences")?.iter().collect();
    for key in ["preferences_by_severity", "preferences_by_rater"] {
        summaries.extend(report[key].as_array().ok_or("missing strata")?.iter().map(|s| &s["summary"]));
    }
    ensure(!summaries.is_empty(), || "no preference summaries".into())?;
    for s in &summaries {
        let total: f64 = s["proportions"].as_object().ok_or("no proportions")?.values().filter_map(|v| v.as_f64()).sum();
        ensure((total - 1.0).abs() < 1e-9, || format!("proportions sum to {total}"))?;
        for (est, ci) in [("at_least_as_good", "at_least_as_good_ci"), ("part_consensus", "part_consensus_ci")] {
            let (x, lo, hi) = (s[est].as_f64(), s[ci]["lo"].as_f64(), s[ci]["hi"].as_f64());
            ensure(matches!((x, lo, hi), (Some(x), Some(lo), Some(hi)) if lo <= x && x <= hi), || {
                format!("{est} {x:?} outside [{lo:?}, {hi:?}]")
            })?;
        }
    }
    for m in report["means"].as_array().ok_or("no means")? {
        let (x, lo, hi) = (m["mean"].as_f64(), m["ci"]["lo"].as_f64(), m["ci"]["hi"].as_f64());
        ensure(matches!((x, lo, hi), (Some(x), Some(lo), Some(hi)) if lo <= x && x <= hi), || {
            format!("mean {x:?} outside [{lo:?}, {hi:?}]")
        })?;
    }
    let mut tables = 0;
    for entry in std::fs::read_dir(d.join("analysis")).map_err(|e| e.to_string())? {
        let p = entry.map_err(|e| e.to_string())?.path();
        if p.extension().is_some_and(|e| e == "csv") {
            let rows = std::fs::read_to_string(&p).map_err(|e| e.to_string())?.lines().count();
            ensure(rows > 1, || format!("{} is empty", p.display()))?;
            tables += 1;
        }
    }
    within(start, Duration::from_secs(60), "end-to-end pipeline")?;
    Ok(format!("{} steps, {tables} non-empty tables, {} preference summaries, {:.1?}", steps.len(), summaries.len(), start.elapsed()))
}

// ---------------------------------------------------------------------------

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 9] = [
        ("metric oracle suite", metric_oracles),
        ("wilcoxon exactness", wilcoxon_exactness),
        ("bootstrap behavior", bootstrap_behavior),
        ("preference mapping", preference_mapping),
        ("tiler invariants", tiler_invariants),
        ("packing stress", packing_stress),
        ("split integrity", split_integrity),
        ("baseline contracts", baseline_contracts),
        ("end-to-end smoke", end_to_end),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        ran += 1;
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
