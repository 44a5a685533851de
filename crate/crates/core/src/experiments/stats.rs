//! Wilcoxon signed-rank and rank-sum tests with exact small-sample p-values.

use statrs::distribution::{ContinuousCDF, Normal};

use super::{ExperimentError, Result};

/// Largest number of non-zero differences handled exactly by [`wilcoxon_signed_rank`].
pub const SIGNED_RANK_EXACT_MAX: usize = 12;
/// Largest pooled sample size handled exactly by [`wilcoxon_rank_sum`].
pub const RANK_SUM_EXACT_MAX: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    /// Two-sided.
    pub p_value: f64,
    pub exact: bool,
}

/// 1-based ranks with tied values sharing the mean of their positions.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let r = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Sizes of the groups of tied values.
fn tie_groups(x: &[f64]) -> Vec<usize> {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        groups.push(j - i);
        i = j;
    }
    groups
}

fn normal_sf(z: f64) -> f64 {
    Normal::standard().sf(z)
}

/// Two-sided normal-approximation p-value with a 0.5 continuity correction.
fn normal_p(statistic: f64, mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return 1.0;
    }
    let dev = ((statistic - mean).abs() - 0.5).max(0.0);
    (2.0 * normal_sf(dev / var.sqrt())).min(1.0)
}

/// Two-sided p from an exact count distribution over doubled statistics.
fn exact_p(counts: &[f64], observed2: usize) -> f64 {
    let total: f64 = counts.iter().sum();
    let low: f64 = counts[..=observed2].iter().sum();
    let high: f64 = counts[observed2..].iter().sum();
    (2.0 * low.min(high) / total).min(1.0)
}

/// Paired two-sided Wilcoxon signed-rank test of `a − b`.
///
/// Zero differences are dropped; if none remain the p-value is 1. With at
/// most [`SIGNED_RANK_EXACT_MAX`] differences left the p-value is exact over
/// all sign assignments of the (mid)ranks, otherwise it comes from the normal
/// approximation with tie and continuity correction. The statistic is the
/// smaller of the positive and negative rank sums.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(ExperimentError::Argument(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(ExperimentError::Argument("paired samples are empty".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(ExperimentError::Argument("samples must be finite".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(TestResult { statistic: 0.0, p_value: 1.0, exact: true });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let statistic = w_plus.min(total - w_plus);

    if n <= SIGNED_RANK_EXACT_MAX {
        // midranks are multiples of 1/2, so doubled ranks are integers
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; max + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=max).rev() {
                counts[s] += counts[s - r];
            }
        }
        let p = exact_p(&counts, (2.0 * w_plus).round() as usize);
        return Ok(TestResult { statistic, p_value: p, exact: true });
    }
    let ties: f64 = tie_groups(&abs).iter().map(|&t| (t * t * t - t) as f64).sum();
    let nf = n as f64;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    Ok(TestResult { statistic, p_value: normal_p(w_plus, total / 2.0, var), exact: false })
}

/// Two-sided Wilcoxon rank-sum (Mann-Whitney) test.
///
/// Exact over all assignments of the pooled midranks to the two groups when
/// `m + n ≤` [`RANK_SUM_EXACT_MAX`], otherwise the normal approximation with
/// tie and continuity correction. The statistic is the rank sum of `a`.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(ExperimentError::Argument("rank-sum test needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(ExperimentError::Argument("samples must be finite".into()));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (m, n) = (a.len(), b.len());
    let big_n = m + n;
    let ranks = midranks(&pooled);
    let statistic: f64 = ranks[..m].iter().sum();

    if big_n <= RANK_SUM_EXACT_MAX {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        // counts[k][s]: subsets of size k with doubled rank sum s
        let mut counts = vec![vec![0.0f64; max + 1]; m + 1];
        counts[0][0] = 1.0;
        for &r in &doubled {
            for k in (1..=m).rev() {
                for s in (r..=max).rev() {
                    counts[k][s] += counts[k - 1][s - r];
                }
            }
        }
        let p = exact_p(&counts[m], (2.0 * statistic).round() as usize);
        return Ok(TestResult { statistic, p_value: p, exact: true });
    }
    let (mf, nf, total) = (m as f64, n as f64, big_n as f64);
    let ties: f64 = tie_groups(&pooled).iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = mf * nf / 12.0 * ((total + 1.0) - ties / (total * (total - 1.0)));
    Ok(TestResult { statistic, p_value: normal_p(statistic, mf * (total + 1.0) / 2.0, var), exact: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_positive_differences() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0], &[0.0; 3]).unwrap();
        assert_eq!(r.p_value, 0.25);
        assert_eq!(r.statistic, 0.0);
    }

    #[test]
    fn identical_pairs_give_p_one() {
        let a = [0.3, 0.5, 0.9];
        assert_eq!(wilcoxon_signed_rank(&a, &a).unwrap().p_value, 1.0);
    }

    #[test]
    fn separated_groups() {
        let r = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((r.p_value - 0.1).abs() < 1e-15);
        assert_eq!(r.statistic, 6.0);
    }

    #[test]
    fn same_multiset_is_not_significant() {
        let a = [1.0, 2.0, 2.0, 5.0];
        assert!(wilcoxon_rank_sum(&a, &a).unwrap().p_value >= 0.99);
    }

    #[test]
    fn bad_arguments() {
        assert!(wilcoxon_signed_rank(&[1.0], &[1.0, 2.0]).is_err());
        assert!(wilcoxon_signed_rank(&[], &[]).is_err());
        assert!(wilcoxon_rank_sum(&[], &[1.0]).is_err());
    }

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
