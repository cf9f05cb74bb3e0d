use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::StatsError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Quantile of sorted data with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Replicate `r` draws from its own ChaCha stream so results do not depend on
/// how replicates are scheduled.
fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

fn interval(mut stats: Vec<f64>, level: f64) -> ConfidenceInterval {
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    ConfidenceInterval { lo: percentile(&stats, tail), hi: percentile(&stats, 1.0 - tail) }
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_ci(values: &[f64], replicates: usize, level: f64, seed: u64) -> Result<ConfidenceInterval, StatsError> {
    if values.is_empty() || replicates == 0 {
        return Err(StatsError::Empty);
    }
    let n = values.len();
    let stats: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r);
            let mut sum = 0.0;
            for _ in 0..n {
                sum += values[rng.random_range(0..n)];
            }
            sum / n as f64
        })
        .collect();
    Ok(interval(stats, level))
}

/// Percentile bootstrap for an arbitrary statistic of resampled unit indices
/// (units are parts in every caller).
pub fn bootstrap_statistic<F>(
    n_units: usize,
    replicates: usize,
    level: f64,
    seed: u64,
    statistic: F,
) -> Result<ConfidenceInterval, StatsError>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    if n_units == 0 || replicates == 0 {
        return Err(StatsError::Empty);
    }
    let stats: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n_units),
            |idx, r| {
                let mut rng = replicate_rng(seed, r);
                idx.clear();
                idx.extend((0..n_units).map(|_| rng.random_range(0..n_units)));
                statistic(idx)
            },
        )
        .collect();
    Ok(interval(stats, level))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_values_give_zero_width() {
        let ci = bootstrap_ci(&[4.0; 30], 1000, 0.95, 1).unwrap();
        assert_eq!(ci, ConfidenceInterval { lo: 4.0, hi: 4.0 });
    }

    #[test]
    fn contains_mean_of_one_to_hundred() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let ci = bootstrap_ci(&v, 10_000, 0.95, 0).unwrap();
        assert!(ci.contains(50.5), "{ci:?}");
        assert!(ci.width() > 5.0 && ci.width() < 20.0);
    }

    #[test]
    fn deterministic_per_seed() {
        let v = [1.0, 2.0, 5.0, 3.0];
        assert_eq!(bootstrap_ci(&v, 500, 0.95, 3).unwrap(), bootstrap_ci(&v, 500, 0.95, 3).unwrap());
        assert_ne!(bootstrap_ci(&v, 500, 0.95, 3).unwrap(), bootstrap_ci(&v, 500, 0.95, 4).unwrap());
    }

    #[test]
    fn generic_statistic_matches_mean_route() {
        let v = [3.0, 4.0, 4.0, 5.0, 2.0, 5.0];
        let a = bootstrap_ci(&v, 2000, 0.95, 11).unwrap();
        let b = bootstrap_statistic(v.len(), 2000, 0.95, 11, |idx| {
            idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64
        })
        .unwrap();
        assert!((a.lo - b.lo).abs() < 1e-12 && (a.hi - b.hi).abs() < 1e-12);
    }

    #[test]
    fn percentile_interpolates() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&s, 0.0), 1.0);
        assert_eq!(percentile(&s, 1.0), 4.0);
        assert!((percentile(&s, 0.5) - 2.5).abs() < 1e-15);
        assert!((percentile(&s, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(bootstrap_ci(&[], 10, 0.95, 0), Err(StatsError::Empty)));
    }
}
