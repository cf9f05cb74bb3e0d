use serde::{Deserialize, Serialize};

/// Sentence-level ROUGE-L against a single reference, F-measure with beta = 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Longest common subsequence length, two-row dynamic program.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> RougeScore {
    let l = lcs_len(candidate, reference) as f64;
    let precision = if candidate.is_empty() { 0.0 } else { l / candidate.len() as f64 };
    let recall = if reference.is_empty() { 0.0 } else { l / reference.len() as f64 };
    let f = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    RougeScore { precision, recall, f }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tokenize;

    #[test]
    fn identical() {
        let t = tokenize("tubular adenoma of colon");
        assert_eq!(rouge_l(&t, &t), RougeScore { precision: 1.0, recall: 1.0, f: 1.0 });
    }

    #[test]
    fn hand_computed_pair() {
        let c = tokenize("acute esophagitis with fungal elements");
        let r = tokenize("acute esophagitis");
        let s = rouge_l(&c, &r);
        assert_eq!(lcs_len(&c, &r), 2);
        assert_eq!(s.precision, 0.4);
        assert_eq!(s.recall, 1.0);
        assert!((s.f - 0.5714).abs() < 1e-4);
        assert!((s.f - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn empty_candidate() {
        let r = tokenize("benign");
        let s = rouge_l(&Vec::<String>::new(), &r);
        assert_eq!(s, RougeScore { precision: 0.0, recall: 0.0, f: 0.0 });
    }
}
