use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Case, DatasetError};
use crate::seeding::keyed_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Case-level split assignment. Serializes as the split output JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub assignment: BTreeMap<String, Split>,
}

pub type SplitFile = SplitAssignment;

impl SplitAssignment {
    pub fn split_of(&self, case_id: &str) -> Option<Split> {
        self.assignment.get(case_id).copied()
    }

    /// Part counts per split (rows: train, validation, test) and part category.
    pub fn part_counts(&self, cases: &[Case]) -> [[usize; 4]; 3] {
        let mut counts = [[0usize; 4]; 3];
        for case in cases {
            if let Some(split) = self.split_of(&case.case_id) {
                for (c, n) in case.part_counts().iter().enumerate() {
                    counts[split.index()][c] += n;
                }
            }
        }
        counts
    }
}

fn validate_ratios(ratios: [f64; 3]) -> Result<(), DatasetError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| *r <= 0.0 || !r.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::InvalidRatios(ratios.to_vec()));
    }
    Ok(())
}

/// Assigns whole cases to train/validation/test.
///
/// Pinned cases keep their split. The rest are sorted by case id, shuffled
/// with the seed and placed one at a time into the split with the largest
/// remaining part deficit, where the deficit is measured per part category
/// and weighted by the case's own category counts.
pub fn split_dataset(
    cases: &[Case],
    ratios: [f64; 3],
    seed: u64,
    pinned: &BTreeMap<String, Split>,
) -> Result<SplitAssignment, DatasetError> {
    validate_ratios(ratios)?;
    let mut sorted: Vec<&Case> = cases.iter().collect();
    sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    for key in pinned.keys() {
        if sorted.binary_search_by(|c| c.case_id.as_str().cmp(key)).is_err() {
            return Err(DatasetError::UnknownPinnedCase(key.clone()));
        }
    }

    let mut totals = [0usize; 4];
    for case in &sorted {
        for (c, n) in case.part_counts().iter().enumerate() {
            totals[c] += n;
        }
    }
    let targets: [[f64; 4]; 3] =
        std::array::from_fn(|s| std::array::from_fn(|c| ratios[s] * totals[c] as f64));
    let mut current = [[0usize; 4]; 3];
    let mut assignment = BTreeMap::new();

    let mut free = Vec::new();
    for case in sorted {
        match pinned.get(&case.case_id) {
            Some(&split) => {
                for (c, n) in case.part_counts().iter().enumerate() {
                    current[split.index()][c] += n;
                }
                assignment.insert(case.case_id.clone(), split);
            }
            None => free.push(case),
        }
    }

    let mut rng = keyed_rng(seed, &["split_dataset"]);
    free.shuffle(&mut rng);
    for case in free {
        let counts = case.part_counts();
        let deficit = |s: usize| -> f64 {
            counts
                .iter()
                .enumerate()
                .map(|(c, &n)| n as f64 * (targets[s][c] - current[s][c] as f64))
                .sum()
        };
        let mut best = 0;
        for s in 1..3 {
            if deficit(s) > deficit(best) {
                best = s;
            }
        }
        for (c, n) in counts.iter().enumerate() {
            current[best][c] += n;
        }
        assignment.insert(case.case_id.clone(), Split::ALL[best]);
    }

    Ok(SplitAssignment { seed, ratios, assignment })
}
