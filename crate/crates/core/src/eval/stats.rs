//! Wilcoxon signed-rank test and percentile bootstrap.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest effective sample size evaluated with the exact null distribution.
pub const EXACT_MAX_N: usize = 12;
pub const MIN_PAIRS: usize = 5;

/// Alternative hypothesis. `Greater` means `a` tends to exceed `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Two,
    Greater,
    Less,
}

impl fmt::Display for Tail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tail::Two => "two",
            Tail::Greater => "greater",
            Tail::Less => "less",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub test: String,
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub p_value: f64,
    pub tail: Tail,
    pub n: usize,
    pub exact: bool,
}

/// Average ranks (1-based) of `values`, ties sharing the mean of their
/// positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Null distribution of `2·W+`: entry `k` counts sign assignments with
/// doubled positive rank sum `k`. Doubling keeps tied average ranks integral.
fn doubled_rank_sum_counts(doubled_ranks: &[usize]) -> Vec<u64> {
    let total: usize = doubled_ranks.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in doubled_ranks {
        for k in (0..=reach).rev() {
            if counts[k] > 0 {
                counts[k + r] += counts[k];
            }
        }
        reach += r;
    }
    counts
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], tail: Tail) -> Result<StatTestResult> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n < MIN_PAIRS {
        return Err(Error::InsufficientPairs(n));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;

    let exact = n <= EXACT_MAX_N;
    let p = if exact {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let counts = doubled_rank_sum_counts(&doubled);
        let all = (1u64 << n) as f64;
        let obs = (2.0 * w_plus).round() as usize;
        let upper = counts[obs..].iter().sum::<u64>() as f64 / all;
        let lower = counts[..=obs].iter().sum::<u64>() as f64 / all;
        match tail {
            Tail::Greater => upper,
            Tail::Less => lower,
            Tail::Two => (2.0 * upper.min(lower)).min(1.0),
        }
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i + 1;
            while j < sorted.len() && sorted[j] == sorted[i] {
                j += 1;
            }
            let t = (j - i) as f64;
            tie_term += t * t * t - t;
            i = j;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let sd = var.sqrt();
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let upper_tail = |z: f64| 1.0 - std_normal.cdf(z);
        match tail {
            Tail::Greater => upper_tail((w_plus - mean - 0.5) / sd),
            Tail::Less => std_normal.cdf((w_plus - mean + 0.5) / sd),
            Tail::Two => (2.0 * upper_tail(((w_plus - mean).abs() - 0.5).max(0.0) / sd)).min(1.0),
        }
    };
    Ok(StatTestResult {
        test: "wilcoxon_signed_rank".into(),
        statistic: w_plus.min(w_minus),
        w_plus,
        p_value: p.clamp(0.0, 1.0),
        tail,
        n,
        exact,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    pub point: f64,
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `b` resamples of `0..n` with replacement, one ChaCha stream per replicate.
pub fn bootstrap_indices(n: usize, b: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..b)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        })
        .collect()
}

fn check_bootstrap_args(n: usize, b: usize, alpha: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("bootstrap needs a nonempty sample"));
    }
    if b < 100 {
        return Err(Error::invalid(format!("bootstrap needs at least 100 replicates, got {b}")));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 0.5)")));
    }
    Ok(())
}

/// Percentile interval of `replicates` at `alpha/2` and `1 - alpha/2`.
pub fn percentile_interval(replicates: &[f64], alpha: f64, point: f64) -> BootstrapCi {
    let mut sorted = replicates.to_vec();
    sorted.sort_by(f64::total_cmp);
    BootstrapCi {
        low: quantile_sorted(&sorted, alpha / 2.0),
        high: quantile_sorted(&sorted, 1.0 - alpha / 2.0),
        point,
    }
}

/// Percentile bootstrap interval for `statistic` over `data`.
pub fn bootstrap_ci<T: Clone>(data: &[T], statistic: impl Fn(&[T]) -> f64, b: usize, alpha: f64, seed: u64) -> Result<BootstrapCi> {
    check_bootstrap_args(data.len(), b, alpha)?;
    let mut buf = Vec::with_capacity(data.len());
    let reps: Vec<f64> = bootstrap_indices(data.len(), b, seed)
        .into_iter()
        .map(|idx| {
            buf.clear();
            buf.extend(idx.iter().map(|&i| data[i].clone()));
            statistic(&buf)
        })
        .collect();
    Ok(percentile_interval(&reps, alpha, statistic(data)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(x: &[f64]) -> f64 {
        x.iter().sum::<f64>() / x.len() as f64
    }

    #[test]
    fn all_positive_five_pairs() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.0; 5];
        let r = wilcoxon_signed_rank(&a, &b, Tail::Greater).unwrap();
        assert_eq!(r.p_value, 1.0 / 32.0);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(wilcoxon_signed_rank(&a, &b, Tail::Two).unwrap().p_value, 1.0 / 16.0);
        assert_eq!(wilcoxon_signed_rank(&a, &b, Tail::Less).unwrap().p_value, 1.0);
    }

    #[test]
    fn identical_samples_have_no_pairs() {
        let a = [0.3; 8];
        assert!(matches!(wilcoxon_signed_rank(&a, &a, Tail::Two), Err(Error::InsufficientPairs(0))));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn normal_approximation_is_close_to_exact_tail() {
        // n = 13 all positive: exact one-tailed p = 2^-13; the approximation
        // is only required to be small and ordered.
        let a: Vec<f64> = (1..=13).map(f64::from).collect();
        let r = wilcoxon_signed_rank(&a, &[0.0; 13], Tail::Greater).unwrap();
        assert!(!r.exact);
        assert!(r.p_value < 1e-3);
        let mixed: Vec<f64> = (1..=20).map(|i| if i % 2 == 0 { i as f64 } else { -(i as f64) }).collect();
        let r = wilcoxon_signed_rank(&mixed, &[0.0; 20], Tail::Two).unwrap();
        assert!(r.p_value > 0.5);
    }

    #[test]
    fn bootstrap_basics() {
        let c = bootstrap_ci(&[0.75; 50], mean, 200, 0.05, 1).unwrap();
        assert_eq!((c.low, c.high, c.point), (0.75, 0.75, 0.75));
        let data: Vec<f64> = (0..40).map(f64::from).collect();
        assert_eq!(bootstrap_ci(&data, mean, 300, 0.1, 4).unwrap(), bootstrap_ci(&data, mean, 300, 0.1, 4).unwrap());
        assert!(bootstrap_ci::<f64>(&[], mean, 200, 0.05, 1).is_err());
        assert!(bootstrap_ci(&data, mean, 50, 0.05, 1).is_err());
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile_sorted(&[0.0, 1.0, 2.0, 3.0], 0.5), 1.5);
        assert_eq!(quantile_sorted(&[5.0], 0.9), 5.0);
    }
}
