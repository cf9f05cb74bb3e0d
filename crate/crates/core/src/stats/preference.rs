use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{bootstrap_statistic, ConfidenceInterval, RatingRecord, StatsError, TextSource};

/// Relative quality of text 1 against text 2 for one rater and part.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PreferenceCategory {
    Text1Preferred,
    BothOkText1,
    BothOkSame,
    BothOkText2,
    Text2Preferred,
    BothWithErrors,
}

impl PreferenceCategory {
    pub const ALL: [PreferenceCategory; 6] = [
        PreferenceCategory::Text1Preferred,
        PreferenceCategory::BothOkText1,
        PreferenceCategory::BothOkSame,
        PreferenceCategory::BothOkText2,
        PreferenceCategory::Text2Preferred,
        PreferenceCategory::BothWithErrors,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PreferenceCategory::Text1Preferred => "TEXT1_PREFERRED",
            PreferenceCategory::BothOkText1 => "BOTH_OK_TEXT1",
            PreferenceCategory::BothOkSame => "BOTH_OK_SAME",
            PreferenceCategory::BothOkText2 => "BOTH_OK_TEXT2",
            PreferenceCategory::Text2Preferred => "TEXT2_PREFERRED",
            PreferenceCategory::BothWithErrors => "BOTH_WITH_ERRORS",
        }
    }

    /// Text 1 is at least as good as text 2.
    pub fn text1_at_least_as_good(self) -> bool {
        !matches!(self, PreferenceCategory::BothOkText2 | PreferenceCategory::Text2Preferred)
    }
}

pub fn preference_category(r1: u8, r2: u8) -> Result<PreferenceCategory, StatsError> {
    for r in [r1, r2] {
        if !(1..=5).contains(&r) {
            return Err(StatsError::ScoreOutOfRange(r as i64));
        }
    }
    use PreferenceCategory::*;
    Ok(match (r1 >= 4, r2 >= 4) {
        (true, false) => Text1Preferred,
        (false, true) => Text2Preferred,
        (false, false) => BothWithErrors,
        (true, true) => match r1.cmp(&r2) {
            std::cmp::Ordering::Greater => BothOkText1,
            std::cmp::Ordering::Equal => BothOkSame,
            std::cmp::Ordering::Less => BothOkText2,
        },
    })
}

/// Which parts are dropped before computing preferences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionRule {
    /// Drop a part, for every rater, when any rater scored both texts 3 or lower.
    #[default]
    AnyRaterBothLow,
    None,
}

/// Restricts the units that enter a summary. Exclusion is always decided on
/// the full record list, before the scope is applied.
#[derive(Clone, Debug, Default)]
pub struct PreferenceScope {
    pub parts: Option<BTreeSet<String>>,
    pub rater: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSummary {
    pub text1: TextSource,
    pub text2: TextSource,
    pub n_parts: usize,
    /// Rater-part units with both texts scored.
    pub n_units: usize,
    pub excluded_parts: Vec<String>,
    pub counts: BTreeMap<PreferenceCategory, usize>,
    pub proportions: BTreeMap<PreferenceCategory, f64>,
    pub at_least_as_good: f64,
    pub at_least_as_good_ci: ConfidenceInterval,
    /// Share of parts where every rater found text 1 at least as good.
    pub part_consensus: f64,
    pub part_consensus_ci: ConfidenceInterval,
}

pub(crate) fn paired_scores(
    ratings: &[RatingRecord],
    text1: TextSource,
    text2: TextSource,
) -> BTreeMap<(String, String), (u8, u8)> {
    let mut by_unit: BTreeMap<(String, String), (Option<u8>, Option<u8>)> = BTreeMap::new();
    for r in ratings {
        let Some(v) = r.score.value() else { continue };
        let slot = by_unit.entry((r.part_id.clone(), r.rater_id.clone())).or_default();
        if r.text_source == text1 {
            slot.0 = Some(v);
        } else if r.text_source == text2 {
            slot.1 = Some(v);
        }
    }
    by_unit
        .into_iter()
        .filter_map(|(k, (a, b))| Some((k, (a?, b?))))
        .collect()
}

pub fn preference_summary(
    ratings: &[RatingRecord],
    sources: (TextSource, TextSource),
    exclusion: ExclusionRule,
    scope: &PreferenceScope,
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<PreferenceSummary, StatsError> {
    let (text1, text2) = sources;
    let units = paired_scores(ratings, text1, text2);
    let excluded: BTreeSet<String> = match exclusion {
        ExclusionRule::None => BTreeSet::new(),
        ExclusionRule::AnyRaterBothLow => units
            .iter()
            .filter(|(_, (a, b))| *a <= 3 && *b <= 3)
            .map(|((p, _), _)| p.clone())
            .collect(),
    };

    let mut per_part: BTreeMap<&str, Vec<PreferenceCategory>> = BTreeMap::new();
    for ((part, rater), (a, b)) in &units {
        if excluded.contains(part)
            || scope.parts.as_ref().is_some_and(|s| !s.contains(part))
            || scope.rater.as_ref().is_some_and(|r| r != rater)
        {
            continue;
        }
        per_part.entry(part.as_str()).or_default().push(preference_category(*a, *b)?);
    }
    if per_part.is_empty() {
        return Err(StatsError::NoIncludedParts);
    }

    let mut counts: BTreeMap<PreferenceCategory, usize> = PreferenceCategory::ALL.iter().map(|c| (*c, 0)).collect();
    for cats in per_part.values() {
        for c in cats {
            *counts.get_mut(c).unwrap() += 1;
        }
    }
    let n_units: usize = counts.values().sum();
    let proportions = counts.iter().map(|(c, k)| (*c, *k as f64 / n_units as f64)).collect();

    let part_good: Vec<(usize, usize)> = per_part
        .values()
        .map(|cats| (cats.iter().filter(|c| c.text1_at_least_as_good()).count(), cats.len()))
        .collect();
    let unit_share = |idx: &mut dyn Iterator<Item = usize>| {
        let (good, total) = idx.fold((0usize, 0usize), |(g, t), i| (g + part_good[i].0, t + part_good[i].1));
        good as f64 / total as f64
    };
    let consensus = |idx: &mut dyn Iterator<Item = usize>| {
        let (agree, total) =
            idx.fold((0usize, 0usize), |(a, t), i| (a + usize::from(part_good[i].0 == part_good[i].1), t + 1));
        agree as f64 / total as f64
    };
    let n_parts = part_good.len();
    let at_least_as_good = unit_share(&mut (0..n_parts));
    let part_consensus = consensus(&mut (0..n_parts));
    let at_least_as_good_ci =
        bootstrap_statistic(n_parts, replicates, level, seed, |idx| unit_share(&mut idx.iter().copied()))?;
    let part_consensus_ci =
        bootstrap_statistic(n_parts, replicates, level, seed, |idx| consensus(&mut idx.iter().copied()))?;

    Ok(PreferenceSummary {
        text1,
        text2,
        n_parts,
        n_units,
        excluded_parts: excluded.into_iter().collect(),
        counts,
        proportions,
        at_least_as_good,
        at_least_as_good_ci,
        part_consensus,
        part_consensus_ci,
    })
}
