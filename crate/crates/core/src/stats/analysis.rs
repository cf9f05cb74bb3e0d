use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    bootstrap_ci, group_rare, mean, nlg_vs_rating, preference_summary, rater_confusion, severity_classify,
    wilcoxon_signed_rank, ConfidenceInterval, ConfusionMatrix, ExclusionRule, NlgVsRating, PreferenceCategory,
    PreferenceScope, PreferenceSummary, RatingRecord, Score, SeverityLexicon, StatsError, TextSource,
    WilcoxonResult,
};
use crate::dataset::{Part, PartCategory, Severity, Split, SplitAssignment};
use crate::seeding::derive_seed;

/// NLG metrics of one text for one part, the scores input of the analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceScore {
    pub part_id: String,
    pub text_source: TextSource,
    pub rouge_l_f: f64,
    pub meteor: f64,
    pub avg: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    pub exclusion: ExclusionRule,
    pub lexicon: SeverityLexicon,
    pub rare_threshold: f64,
    /// Pairs compared by preference and paired tests. Empty means every rated
    /// source against the original text.
    pub comparisons: Vec<(TextSource, TextSource)>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            replicates: 10_000,
            level: 0.95,
            seed: 0,
            exclusion: ExclusionRule::AnyRaterBothLow,
            lexicon: SeverityLexicon::default(),
            rare_threshold: 0.01,
            comparisons: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AnalysisInput<'a> {
    pub ratings: &'a [RatingRecord],
    pub scores: &'a [SourceScore],
    pub parts: Option<&'a [Part]>,
    pub split: Option<&'a SplitAssignment>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceMean {
    pub text_source: TextSource,
    pub n_parts: usize,
    pub n_ratings: usize,
    /// Mean over parts of the rater-averaged score.
    pub mean: f64,
    pub ci: ConfidenceInterval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub text1: TextSource,
    pub text2: TextSource,
    pub n_parts: usize,
    pub mean_difference: f64,
    pub wilcoxon: Option<WilcoxonResult>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratifiedPreference {
    pub stratum: String,
    pub summary: PreferenceSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingDistribution {
    pub stratum: String,
    pub text_source: TextSource,
    /// Counts of scores 1..=5.
    pub counts: [usize; 5],
    pub need_more_info: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryScores {
    pub text_source: TextSource,
    pub group: String,
    pub n: usize,
    pub rouge_l_f: f64,
    pub meteor: f64,
    pub avg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TissueTable {
    pub split: Split,
    pub category: PartCategory,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub seed: u64,
    pub replicates: usize,
    pub level: f64,
    pub means: Vec<SourceMean>,
    pub paired_tests: Vec<PairedTest>,
    pub preferences: Vec<PreferenceSummary>,
    pub preferences_by_severity: Vec<StratifiedPreference>,
    pub preferences_by_rater: Vec<StratifiedPreference>,
    pub skipped_comparisons: Vec<String>,
    pub confusion: Vec<ConfusionMatrix>,
    pub rating_distributions: Vec<RatingDistribution>,
    pub nlg_vs_rating: NlgVsRating,
    pub nlg_by_group: Vec<CategoryScores>,
    pub tissue: Vec<TissueTable>,
    pub need_more_info: BTreeMap<TextSource, usize>,
    pub excluded_parts: Vec<String>,
}

fn part_means(ratings: &[RatingRecord], source: TextSource) -> (BTreeMap<&str, f64>, usize) {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    let mut n = 0;
    for r in ratings.iter().filter(|r| r.text_source == source) {
        if let Score::Rated(v) = r.score {
            let e = acc.entry(r.part_id.as_str()).or_default();
            e.0 += v as f64;
            e.1 += 1;
            n += 1;
        }
    }
    (acc.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect(), n)
}

fn distribution(stratum: &str, source: TextSource, records: &mut dyn Iterator<Item = &RatingRecord>) -> RatingDistribution {
    let mut d = RatingDistribution { stratum: stratum.into(), text_source: source, counts: [0; 5], need_more_info: 0 };
    for r in records.filter(|r| r.text_source == source) {
        match r.score {
            Score::Rated(v) => d.counts[v as usize - 1] += 1,
            Score::NeedMoreInfo => d.need_more_info += 1,
        }
    }
    d
}

pub fn analyze(input: &AnalysisInput<'_>, config: &AnalysisConfig) -> Result<AnalysisReport, StatsError> {
    let ratings = input.ratings;
    if ratings.is_empty() {
        return Err(StatsError::Empty);
    }
    let sources: BTreeSet<TextSource> = ratings.iter().map(|r| r.text_source).collect();
    let raters: BTreeSet<&str> = ratings.iter().map(|r| r.rater_id.as_str()).collect();
    let sub_seed = |keys: &[&str]| derive_seed(config.seed, keys);

    let mut means = Vec::new();
    let mut by_source = BTreeMap::new();
    for &source in &sources {
        let (pm, n_ratings) = part_means(ratings, source);
        if !pm.is_empty() {
            let values: Vec<f64> = pm.values().copied().collect();
            means.push(SourceMean {
                text_source: source,
                n_parts: values.len(),
                n_ratings,
                mean: mean(&values),
                ci: bootstrap_ci(&values, config.replicates, config.level, sub_seed(&["mean", source.as_str()]))?,
            });
        }
        by_source.insert(source, pm);
    }

    let comparisons: Vec<(TextSource, TextSource)> = if config.comparisons.is_empty() {
        sources
            .iter()
            .filter(|s| **s != TextSource::Original && sources.contains(&TextSource::Original))
            .map(|s| (*s, TextSource::Original))
            .collect()
    } else {
        config.comparisons.clone()
    };

    let mut paired_tests = Vec::new();
    for &(a, b) in &comparisons {
        let empty = BTreeMap::new();
        let (ma, mb) = (by_source.get(&a).unwrap_or(&empty), by_source.get(&b).unwrap_or(&empty));
        let diffs: Vec<f64> = ma.iter().filter_map(|(p, va)| mb.get(p).map(|vb| va - vb)).collect();
        let (wilcoxon, note) = if diffs.is_empty() {
            (None, Some("no parts rated for both texts".to_string()))
        } else {
            match wilcoxon_signed_rank(&diffs) {
                Ok(w) => (Some(w), None),
                Err(e) => (None, Some(e.to_string())),
            }
        };
        paired_tests.push(PairedTest {
            text1: a,
            text2: b,
            n_parts: diffs.len(),
            mean_difference: if diffs.is_empty() { 0.0 } else { mean(&diffs) },
            wilcoxon,
            note,
        });
    }

    let severity: Option<BTreeMap<&str, Severity>> = input.parts.map(|parts| {
        parts
            .iter()
            .map(|p| {
                let s = p.severity.unwrap_or_else(|| severity_classify(&p.section.finding, &config.lexicon));
                (p.part_id.as_str(), s)
            })
            .collect()
    });

    let mut preferences = Vec::new();
    let mut preferences_by_severity = Vec::new();
    let mut preferences_by_rater = Vec::new();
    let mut skipped_comparisons = Vec::new();
    let mut excluded_parts = BTreeSet::new();
    for &(a, b) in &comparisons {
        let tag = format!("{a}_vs_{b}");
        let run = |scope: &PreferenceScope, key: &str| {
            preference_summary(
                ratings,
                (a, b),
                config.exclusion,
                scope,
                config.replicates,
                config.level,
                sub_seed(&["preference", &tag, key]),
            )
        };
        match run(&PreferenceScope::default(), "all") {
            Ok(s) => {
                excluded_parts.extend(s.excluded_parts.iter().cloned());
                preferences.push(s);
            }
            Err(e) => {
                skipped_comparisons.push(format!("{tag}: {e}"));
                continue;
            }
        }
        if let Some(sev) = &severity {
            for level in Severity::ALL {
                let parts: BTreeSet<String> =
                    sev.iter().filter(|(_, s)| **s == level).map(|(p, _)| p.to_string()).collect();
                let scope = PreferenceScope { parts: Some(parts), rater: None };
                match run(&scope, level.as_str()) {
                    Ok(summary) => preferences_by_severity.push(StratifiedPreference { stratum: level.as_str().into(), summary }),
                    Err(e) => skipped_comparisons.push(format!("{tag} [{}]: {e}", level.as_str())),
                }
            }
        }
        for rater in &raters {
            let scope = PreferenceScope { parts: None, rater: Some(rater.to_string()) };
            match run(&scope, &format!("rater:{rater}")) {
                Ok(summary) => preferences_by_rater.push(StratifiedPreference { stratum: rater.to_string(), summary }),
                Err(e) => skipped_comparisons.push(format!("{tag} [rater {rater}]: {e}")),
            }
        }
    }

    let rater_list: Vec<&str> = raters.iter().copied().collect();
    let mut confusion = Vec::new();
    for &source in &sources {
        for (i, ra) in rater_list.iter().enumerate() {
            for rb in &rater_list[i + 1..] {
                confusion.push(rater_confusion(ratings, source, ra, rb));
            }
        }
    }

    let mut rating_distributions = Vec::new();
    for &source in &sources {
        rating_distributions.push(distribution("all", source, &mut ratings.iter()));
        for rater in &rater_list {
            rating_distributions.push(distribution(
                &format!("rater:{rater}"),
                source,
                &mut ratings.iter().filter(|r| r.rater_id == *rater),
            ));
        }
        if let Some(sev) = &severity {
            for level in Severity::ALL {
                rating_distributions.push(distribution(
                    &format!("severity:{}", level.as_str()),
                    source,
                    &mut ratings.iter().filter(|r| sev.get(r.part_id.as_str()) == Some(&level)),
                ));
            }
        }
    }

    let mut nlg_by_group = Vec::new();
    if let Some(parts) = input.parts {
        let by_id: BTreeMap<&str, &Part> = parts.iter().map(|p| (p.part_id.as_str(), p)).collect();
        let mut groups: BTreeMap<(TextSource, String), Vec<&super::SourceScore>> = BTreeMap::new();
        for s in input.scores {
            if let Some(p) = by_id.get(s.part_id.as_str()) {
                groups.entry((s.text_source, p.category().as_str().to_string())).or_default().push(s);
                groups.entry((s.text_source, format!("slides={}", p.slide_ids.len()))).or_default().push(s);
            }
        }
        for ((source, group), v) in groups {
            let n = v.len() as f64;
            nlg_by_group.push(CategoryScores {
                text_source: source,
                group,
                n: v.len(),
                rouge_l_f: v.iter().map(|s| s.rouge_l_f).sum::<f64>() / n,
                meteor: v.iter().map(|s| s.meteor).sum::<f64>() / n,
                avg: v.iter().map(|s| s.avg).sum::<f64>() / n,
            });
        }
    }

    let mut tissue = Vec::new();
    if let (Some(parts), Some(split)) = (input.parts, input.split) {
        let mut raw: BTreeMap<(Split, PartCategory), BTreeMap<String, usize>> = BTreeMap::new();
        for p in parts {
            if let Some(s) = split.split_of(&p.case_id) {
                *raw.entry((s, p.category())).or_default().entry(p.tissue_name()).or_insert(0) += 1;
            }
        }
        for ((split, category), counts) in raw {
            tissue.push(TissueTable { split, category, counts: group_rare(&counts, config.rare_threshold) });
        }
    }

    let mut need_more_info = BTreeMap::new();
    for &source in &sources {
        need_more_info.insert(
            source,
            ratings.iter().filter(|r| r.text_source == source && r.score == Score::NeedMoreInfo).count(),
        );
    }

    Ok(AnalysisReport {
        seed: config.seed,
        replicates: config.replicates,
        level: config.level,
        means,
        paired_tests,
        preferences,
        preferences_by_severity,
        preferences_by_rater,
        skipped_comparisons,
        confusion,
        rating_distributions,
        nlg_vs_rating: nlg_vs_rating(ratings, input.scores),
        nlg_by_group,
        tissue,
        need_more_info,
        excluded_parts: excluded_parts.into_iter().collect(),
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StatsError + '_ {
    move |source| StatsError::Io { path: path.display().to_string(), source }
}

impl AnalysisReport {
    fn all_preferences(&self) -> impl Iterator<Item = (&str, &PreferenceSummary)> {
        self.preferences
            .iter()
            .map(|p| ("all", p))
            .chain(self.preferences_by_severity.iter().map(|s| (s.stratum.as_str(), &s.summary)))
            .chain(self.preferences_by_rater.iter().map(|s| (s.stratum.as_str(), &s.summary)))
    }

    /// Proportions sum to one per comparison and every interval contains its
    /// point estimate.
    pub fn check_invariants(&self) -> Result<(), String> {
        for m in &self.means {
            if !m.ci.contains(m.mean) {
                return Err(format!("{} mean {} outside {:?}", m.text_source, m.mean, m.ci));
            }
        }
        for (stratum, p) in self.all_preferences() {
            let total: f64 = p.proportions.values().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(format!("{}_vs_{} [{stratum}] proportions sum to {total}", p.text1, p.text2));
            }
            if !p.at_least_as_good_ci.contains(p.at_least_as_good) || !p.part_consensus_ci.contains(p.part_consensus) {
                return Err(format!("{}_vs_{} [{stratum}] interval misses its estimate", p.text1, p.text2));
            }
        }
        Ok(())
    }

    /// Writes `report.json` and one CSV per table into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), StatsError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let json_path = dir.join("report.json");
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(&json_path, json + "\n").map_err(io_err(&json_path))?;

        let mut w = csv::Writer::from_path(dir.join("avg_scores.csv"))?;
        w.write_record(["text_source", "n_parts", "n_ratings", "mean", "ci_lo", "ci_hi"])?;
        for m in &self.means {
            w.write_record([
                m.text_source.to_string(),
                m.n_parts.to_string(),
                m.n_ratings.to_string(),
                m.mean.to_string(),
                m.ci.lo.to_string(),
                m.ci.hi.to_string(),
            ])?;
        }
        w.flush().map_err(io_err(dir))?;

        let mut w = csv::Writer::from_path(dir.join("paired_tests.csv"))?;
        w.write_record(["text1", "text2", "n_parts", "mean_difference", "statistic", "p_two_sided", "method", "note"])?;
        for t in &self.paired_tests {
            let (stat, p, method) = match &t.wilcoxon {
                Some(wr) => (wr.statistic.to_string(), wr.p_two_sided.to_string(), format!("{:?}", wr.method)),
                None => Default::default(),
            };
            w.write_record([
                t.text1.to_string(),
                t.text2.to_string(),
                t.n_parts.to_string(),
                t.mean_difference.to_string(),
                stat,
                p,
                method,
                t.note.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(io_err(dir))?;

        let mut w = csv::Writer::from_path(dir.join("preferences.csv"))?;
        let mut header = vec!["text1".to_string(), "text2".into(), "stratum".into(), "n_parts".into(), "n_units".into()];
        header.extend(PreferenceCategory::ALL.iter().map(|c| c.as_str().to_string()));
        header.extend(
            ["at_least_as_good", "ci_lo", "ci_hi", "part_consensus", "consensus_ci_lo", "consensus_ci_hi", "excluded_parts"]
                .map(String::from),
        );
        w.write_record(&header)?;
        for (stratum, p) in self.all_preferences() {
            let mut row = vec![
                p.text1.to_string(),
                p.text2.to_string(),
                stratum.to_string(),
                p.n_parts.to_string(),
                p.n_units.to_string(),
            ];
            row.extend(PreferenceCategory::ALL.iter().map(|c| p.proportions[c].to_string()));
            row.extend([
                p.at_least_as_good.to_string(),
                p.at_least_as_good_ci.lo.to_string(),
                p.at_least_as_good_ci.hi.to_string(),
                p.part_consensus.to_string(),
                p.part_consensus_ci.lo.to_string(),
                p.part_consensus_ci.hi.to_string(),
                p.excluded_parts.join(";"),
            ]);
            w.write_record(&row)?;
        }
        w.flush().map_err(io_err(dir))?;

        let mut w = csv::Writer::from_path(dir.join("confusion.csv"))?;
        w.write_record(["text_source", "rater_a", "rater_b", "score_a", "score_b", "count"])?;
        for m in &self.confusion {
            for (i, row) in m.counts.iter().enumerate() {
                for (j, c) in row.iter().enumerate() {
                    w.write_record([
                        m.text_source.to_string(),
                        m.rater_a.clone(),
                        m.rater_b.clone(),
                        (i + 1).to_string(),
                        (j + 1).to_string(),
                        c.to_string(),
                    ])?;
                }
            }
        }
        w.flush().map_err(io_err(dir))?;

        let mut w = csv::Writer::from_path(dir.join("rating_distributions.csv"))?;
        w.write_record(["stratum", "text_source", "1", "2", "3", "4", "5", "need_more_info"])?;
        for d in &self.rating_distributions {
            let mut row = vec![d.stratum.clone(), d.text_source.to_string()];
            row.extend(d.counts.iter().map(|c| c.to_string()));
            row.push(d.need_more_info.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(io_err(dir))?;

        let mut w = csv::Writer::from_path(dir.join("nlg_vs_rating.csv"))?;
        w.write_record(["rating", "n", "metric", "min", "q1", "median", "q3", "max"])?;
        for b in &self.nlg_vs_rating.buckets {
            for (name, q) in [("rouge_l", b.rouge_l), ("meteor", b.meteor)] {
                let mut row = vec![b.rating.to_string(), b.n.to_string(), name.to_string()];
                match q {
                    Some(q) => row.extend([q.min, q.q1, q.median, q.q3, q.max].map(|v| v.to_string())),
                    None => row.extend(std::iter::repeat_n(String::new(), 5)),
                }
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(io_err(dir))?;

        let mut w = csv::Writer::from_path(dir.join("nlg_by_group.csv"))?;
        w.write_record(["text_source", "group", "n", "rouge_l_f", "meteor", "avg"])?;
        for g in &self.nlg_by_group {
            w.write_record([
                g.text_source.to_string(),
                g.group.clone(),
                g.n.to_string(),
                g.rouge_l_f.to_string(),
                g.meteor.to_string(),
                g.avg.to_string(),
            ])?;
        }
        w.flush().map_err(io_err(dir))?;

        let mut w = csv::Writer::from_path(dir.join("tissue_distribution.csv"))?;
        w.write_record(["split", "category", "tissue", "count"])?;
        for t in &self.tissue {
            for (tissue, c) in &t.counts {
                w.write_record([t.split.as_str(), t.category.as_str(), tissue, &c.to_string()])?;
            }
        }
        w.flush().map_err(io_err(dir))?;
        Ok(())
    }
}
