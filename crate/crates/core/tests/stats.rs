//! Wilcoxon tests against SciPy reference values and brute-force enumeration.

mod common;

use eegkd::experiments::stats::{wilcoxon_rank_sum, wilcoxon_signed_rank, RANK_SUM_EXACT_MAX, SIGNED_RANK_EXACT_MAX};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    a: Vec<f64>,
    b: Vec<f64>,
    #[serde(default)]
    statistic: Option<f64>,
    #[serde(default)]
    u: Option<f64>,
    p: f64,
}

#[derive(Deserialize)]
struct Fixture {
    signed_rank_exact: Vec<Case>,
    rank_sum_exact: Vec<Case>,
    signed_rank_approx: Vec<Case>,
    rank_sum_approx: Vec<Case>,
}

fn fixture() -> Fixture {
    serde_json::from_str(include_str!("fixtures/wilcoxon_scipy.json")).expect("fixture parses")
}

#[test]
fn signed_rank_matches_scipy_in_exact_regime() {
    let f = fixture();
    assert_eq!(f.signed_rank_exact.len(), 100);
    for (i, c) in f.signed_rank_exact.iter().enumerate() {
        let r = wilcoxon_signed_rank(&c.a, &c.b).unwrap();
        assert!(r.exact, "case {i}");
        assert!((r.p_value - c.p).abs() < 1e-6, "case {i}: {} vs {}", r.p_value, c.p);
        assert_eq!(r.statistic, c.statistic.unwrap(), "case {i}");
    }
}

#[test]
fn rank_sum_matches_scipy_in_exact_regime() {
    let f = fixture();
    assert_eq!(f.rank_sum_exact.len(), 100);
    for (i, c) in f.rank_sum_exact.iter().enumerate() {
        let r = wilcoxon_rank_sum(&c.a, &c.b).unwrap();
        assert!(r.exact, "case {i}");
        assert!((r.p_value - c.p).abs() < 1e-6, "case {i}: {} vs {}", r.p_value, c.p);
        // rank sum of `a` = U + m(m+1)/2
        let m = c.a.len() as f64;
        assert!((r.statistic - (c.u.unwrap() + m * (m + 1.0) / 2.0)).abs() < 1e-9, "case {i}");
    }
}

#[test]
fn normal_approximations_match_scipy() {
    let f = fixture();
    for (i, c) in f.signed_rank_approx.iter().enumerate() {
        let r = wilcoxon_signed_rank(&c.a, &c.b).unwrap();
        assert!(!r.exact);
        assert!((r.p_value - c.p).abs() < 1e-9, "signed case {i}: {} vs {}", r.p_value, c.p);
    }
    for (i, c) in f.rank_sum_approx.iter().enumerate() {
        let r = wilcoxon_rank_sum(&c.a, &c.b).unwrap();
        assert!(!r.exact);
        assert!((r.p_value - c.p).abs() < 1e-9, "rank-sum case {i}: {} vs {}", r.p_value, c.p);
    }
}

/// Values on a coarse grid so that ties and zero differences are common.
fn coarse(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-4i32..=4).prop_map(|v| v as f64 / 2.0), len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn signed_rank_is_exact_enumeration_for_small_n(
        (a, b) in (1usize..=SIGNED_RANK_EXACT_MAX).prop_flat_map(|n| (coarse(n..=n), coarse(n..=n)))
    ) {
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        prop_assert!((r.p_value - common::signed_rank_enumerated(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn rank_sum_is_exact_enumeration_for_small_n(
        (a, b) in (2usize..=RANK_SUM_EXACT_MAX).prop_flat_map(|t| (1..t).prop_flat_map(move |m| (coarse(m..=m), coarse(t - m..=t - m))))
    ) {
        let r = wilcoxon_rank_sum(&a, &b).unwrap();
        prop_assert!((r.p_value - common::rank_sum_enumerated(&a, &b)).abs() < 1e-12);
    }
}

/// Just above the exact limit the normal approximation takes over. In the
/// tails (exact p <= 0.1) it stays within 0.01 of full enumeration. Mid-range
/// p-values of a continuity-corrected approximation can be further off
/// (about 0.013 for 13 signed ranks, far more for a rank-sum group of one), so
/// the whole-range gap is printed rather than bounded.
#[test]
fn approximation_agrees_with_enumeration_at_crossover() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut tail, mut overall): (f64, f64) = (0.0, 0.0);
    for _ in 0..300 {
        let n = SIGNED_RANK_EXACT_MAX + 1;
        let shift = rng.random_range(0.0..1.5);
        let a: Vec<f64> = (0..n).map(|_| common::normal(&mut rng)).collect();
        let b: Vec<f64> = (0..n).map(|_| common::normal(&mut rng) + shift).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!(!r.exact);
        let exact = common::signed_rank_enumerated(&a, &b);
        let gap = (r.p_value - exact).abs();
        overall = overall.max(gap);
        if exact <= 0.1 {
            tail = tail.max(gap);
        }
    }
    println!("signed-rank at n={}: tail gap {tail:.5}, overall gap {overall:.5}", SIGNED_RANK_EXACT_MAX + 1);
    assert!(tail < 0.01, "signed-rank tail gap {tail}");

    let (mut tail, mut overall): (f64, f64) = (0.0, 0.0);
    for _ in 0..300 {
        let total = RANK_SUM_EXACT_MAX + 1;
        let m = rng.random_range(3..=total - 3);
        let shift = rng.random_range(0.0..1.5);
        let a: Vec<f64> = (0..m).map(|_| common::normal(&mut rng)).collect();
        let b: Vec<f64> = (0..total - m).map(|_| common::normal(&mut rng) + shift).collect();
        let r = wilcoxon_rank_sum(&a, &b).unwrap();
        assert!(!r.exact);
        let exact = common::rank_sum_enumerated(&a, &b);
        let gap = (r.p_value - exact).abs();
        overall = overall.max(gap);
        if exact <= 0.1 {
            tail = tail.max(gap);
        }
    }
    println!("rank-sum at m+n={}: tail gap {tail:.5}, overall gap {overall:.5}", RANK_SUM_EXACT_MAX + 1);
    assert!(tail < 0.01, "rank-sum tail gap {tail}");
}
