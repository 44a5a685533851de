mod common;

use burn::backend::{Autodiff, NdArray};
use burn::prelude::*;
use common::Maps;
use eegkd::distill::{
    cross_entropy, hkd_loss, plv_similarity, similarity_matrix, sk_loss, softened_kl, total_loss, zero_center,
    CenteringScope, Criterion, DistillConfig, LayerPair,
};
use eegkd::models::{TapName, TapSet};
use eegkd::tensor::{from_f64, labels, scalar, to_vec_f64};
use proptest::prelude::*;
use rand::Rng;

type B = NdArray<f64>;
type AD = Autodiff<NdArray<f64>>;

fn dev() -> <B as Backend>::Device {
    Default::default()
}

fn tensor<BB: Backend>(m: &Maps) -> Tensor<BB, 4> {
    from_f64(m.v.clone(), m.shape, &Default::default())
}

fn taps<BB: Backend>(lf2: &Maps, lf3: &Maps, logits: &[f64], k: usize) -> TapSet<BB> {
    let n = lf2.shape[0];
    TapSet {
        lf1: tensor(lf2),
        lf2: tensor(lf2),
        lf3: tensor(lf3),
        logits: from_f64(logits.to_vec(), [n, k], &Default::default()),
    }
}

fn random_shape(rng: &mut rand_chacha::ChaCha8Rng) -> [usize; 4] {
    let h = rng.random_range(1..=2);
    [rng.random_range(1..=4), rng.random_range(1..=3), h, rng.random_range(1..=16 / h)]
}

fn cfg_for(criterion: Criterion, centered: bool) -> DistillConfig {
    DistillConfig { criterion, centered, ..Default::default() }
}

#[test]
fn sk_loss_of_identical_taps_is_exactly_zero() {
    let mut rng = common::rng(1);
    for _ in 0..50 {
        let shape = random_shape(&mut rng);
        let a = Maps::random(&mut rng, shape);
        let b = Maps::random(&mut rng, [shape[0], 2, 1, 5]);
        let t = taps::<B>(&a, &b, &vec![0.0; shape[0] * 3], 3);
        for criterion in Criterion::ALL {
            assert_eq!(scalar(sk_loss(&t, &t, &cfg_for(criterion, true)).unwrap()), 0.0);
        }
        let other = Maps::random(&mut rng, shape);
        let s = taps::<B>(&other, &b, &vec![0.0; shape[0] * 3], 3);
        assert!(scalar(sk_loss(&t, &s, &DistillConfig::default()).unwrap()) >= 0.0);
    }
}

#[test]
fn single_sample_batches_have_zero_sk_loss() {
    let mut rng = common::rng(2);
    let t = taps::<B>(&Maps::random(&mut rng, [1, 3, 1, 8]), &Maps::random(&mut rng, [1, 2, 1, 4]), &[0.0, 1.0], 2);
    let s = taps::<B>(&Maps::random(&mut rng, [1, 3, 1, 8]), &Maps::random(&mut rng, [1, 2, 1, 4]), &[1.0, 0.0], 2);
    // both 1 × 1 matrices hold the self-similarity, equal up to rounding
    assert!(scalar(sk_loss(&t, &s, &DistillConfig::default()).unwrap()) < 1e-24);
}

#[test]
fn similarity_matrices_match_nested_loop_oracle() {
    let mut rng = common::rng(3);
    for criterion in Criterion::ALL {
        for centered in [true, false] {
            for scope in [CenteringScope::Batch, CenteringScope::Sample] {
                for _ in 0..50 {
                    let shape = random_shape(&mut rng);
                    let m = Maps::random(&mut rng, shape);
                    let got = to_vec_f64(similarity_matrix(tensor::<B>(&m), criterion, centered, scope));
                    let want = common::similarity(&m, criterion.as_str(), centered, scope == CenteringScope::Sample);
                    for (g, w) in got.iter().zip(&want) {
                        assert!((g - w).abs() < 1e-6, "{criterion} centered={centered} {scope:?}: {g} vs {w}");
                    }
                }
            }
        }
    }
}

#[test]
fn sk_loss_matches_nested_loop_oracle() {
    let mut rng = common::rng(4);
    for criterion in Criterion::ALL {
        for centered in [true, false] {
            for _ in 0..50 {
                let shape = random_shape(&mut rng);
                let n = shape[0];
                let (t2, t3) = (Maps::random(&mut rng, shape), Maps::random(&mut rng, [n, 2, 1, 6]));
                let (s2, s3) = (Maps::random(&mut rng, [n, shape[1], 1, 3]), Maps::random(&mut rng, [n, 2, 1, 6]));
                let cfg = cfg_for(criterion, centered);
                let got = scalar(sk_loss(&taps::<B>(&t2, &t3, &vec![0.0; n], 1), &taps::<B>(&s2, &s3, &vec![0.0; n], 1), &cfg).unwrap());
                let c = criterion.as_str();
                let want = common::mse(&common::similarity(&t2, c, centered, false), &common::similarity(&s2, c, centered, false))
                    + common::mse(&common::similarity(&t3, c, centered, false), &common::similarity(&s3, c, centered, false));
                assert!((got - want).abs() < 1e-6, "{c}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn worked_two_sample_example() {
    let teacher = Maps { v: vec![1.0, 0.0, 0.0, 1.0], shape: [2, 1, 1, 2] };
    let student = Maps { v: vec![1.0, 0.0, 0.0, 2.0], shape: [2, 1, 1, 2] };
    // oracle first: both matrices by explicit loops
    let m_t = common::similarity(&teacher, "cosine", true, false);
    let m_s = common::similarity(&student, "cosine", true, false);
    assert!((m_t[1] + 1.0).abs() < 1e-12);
    let expected_off = -1.125 / (0.625f64.sqrt() * 2.125f64.sqrt());
    assert!((m_s[1] - expected_off).abs() < 1e-12);
    assert!((m_s[1] + 0.97619).abs() < 1e-5);
    let oracle_loss = common::mse(&m_t, &m_s);
    assert!((oracle_loss - 2.835e-4).abs() < 1e-6);

    let got_t = to_vec_f64(similarity_matrix(tensor::<B>(&teacher), Criterion::Cosine, true, CenteringScope::Batch));
    let got_s = to_vec_f64(similarity_matrix(tensor::<B>(&student), Criterion::Cosine, true, CenteringScope::Batch));
    for (g, w) in got_t.iter().chain(&got_s).zip(m_t.iter().chain(&m_s)) {
        assert!((g - w).abs() < 1e-12);
    }
    let cfg = DistillConfig { layer_pairs: vec![LayerPair::same(TapName::Lf2)], ..Default::default() };
    let loss = scalar(sk_loss(&taps::<B>(&teacher, &teacher, &[0.0; 2], 1), &taps::<B>(&student, &student, &[0.0; 2], 1), &cfg).unwrap());
    assert!((loss - oracle_loss).abs() < 1e-12);
    let centered = to_vec_f64(zero_center(tensor::<B>(&student), CenteringScope::Batch));
    assert_eq!(centered, common::center(&student, false).v);
}

#[test]
fn similarity_matrices_are_symmetric_and_bounded() {
    let mut rng = common::rng(5);
    for _ in 0..30 {
        let m = Maps::random(&mut rng, [4, 3, 2, 8]);
        for criterion in Criterion::ALL {
            let v = to_vec_f64(similarity_matrix(tensor::<B>(&m), criterion, true, CenteringScope::Batch));
            for i in 0..4 {
                for j in 0..4 {
                    assert!((v[i * 4 + j] - v[j * 4 + i]).abs() < 1e-6);
                    match criterion {
                        Criterion::Cosine => assert!(v[i * 4 + j].abs() <= 1.0 + 1e-12),
                        Criterion::Plv => assert!((0.0..=1.0).contains(&v[i * 4 + j])),
                        _ => {}
                    }
                }
                if criterion == Criterion::Cosine || criterion == Criterion::Plv {
                    assert!((v[i * 5] - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}

/// Central differences of a scalar function of a flat buffer.
fn numeric_gradient(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-6;
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 { diff } else { diff / scale }
}

struct GradCase {
    s2: Maps,
    s3: Maps,
    zs: Vec<f64>,
    t2: Maps,
    t3: Maps,
    zt: Vec<f64>,
    y: Vec<usize>,
    k: usize,
}

impl GradCase {
    fn random(rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        let n = rng.random_range(2..=4);
        let k = 3;
        let (c2, w2) = (rng.random_range(1..=3), rng.random_range(2..=8));
        Self {
            s2: Maps::random(rng, [n, c2, 1, w2]),
            s3: Maps::random(rng, [n, 2, 1, 4]),
            zs: (0..n * k).map(|_| common::normal(rng)).collect(),
            t2: Maps::random(rng, [n, 3, 1, 8]),
            t3: Maps::random(rng, [n, 2, 1, 4]),
            zt: (0..n * k).map(|_| common::normal(rng)).collect(),
            y: (0..n).map(|i| i % k).collect(),
            k,
        }
    }

    fn loss_plain(&self, s2: &[f64], s3: &[f64], zs: &[f64], cfg: &DistillConfig) -> f64 {
        let student = taps::<B>(&Maps { v: s2.to_vec(), shape: self.s2.shape }, &Maps { v: s3.to_vec(), shape: self.s3.shape }, zs, self.k);
        let teacher = taps::<B>(&self.t2, &self.t3, &self.zt, self.k);
        total_loss(&student, Some(&teacher), labels::<B>(&self.y, &dev()), cfg).unwrap().total_value()
    }

    /// Analytic gradients with respect to (LF2, LF3, logits) of the student.
    fn analytic(&self, cfg: &DistillConfig) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let lf2 = tensor::<AD>(&self.s2).require_grad();
        let lf3 = tensor::<AD>(&self.s3).require_grad();
        let n = self.y.len();
        let z = from_f64::<AD, 2>(self.zs.clone(), [n, self.k], &Default::default()).require_grad();
        let student = TapSet { lf1: lf2.clone(), lf2: lf2.clone(), lf3: lf3.clone(), logits: z.clone() };
        let teacher = taps::<AD>(&self.t2, &self.t3, &self.zt, self.k);
        let loss = total_loss(&student, Some(&teacher), labels::<AD>(&self.y, &Default::default()), cfg).unwrap();
        let grads = loss.total.backward();
        let g = |t: &Tensor<AD, 4>| to_vec_f64(t.grad(&grads).unwrap());
        (g(&lf2), g(&lf3), to_vec_f64(z.grad(&grads).unwrap()))
    }

    fn check(&self, cfg: &DistillConfig) -> f64 {
        let (g2, g3, gz) = self.analytic(cfg);
        let n2 = numeric_gradient(&self.s2.v, |v| self.loss_plain(v, &self.s3.v, &self.zs, cfg));
        let n3 = numeric_gradient(&self.s3.v, |v| self.loss_plain(&self.s2.v, v, &self.zs, cfg));
        let nz = numeric_gradient(&self.zs, |v| self.loss_plain(&self.s2.v, &self.s3.v, v, cfg));
        let analytic: Vec<f64> = g2.into_iter().chain(g3).chain(gz).collect();
        let numeric: Vec<f64> = n2.into_iter().chain(n3).chain(nz).collect();
        relative_error(&analytic, &numeric)
    }
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let mut rng = common::rng(6);
    for _ in 0..20 {
        let case = GradCase::random(&mut rng);
        let err = case.check(&DistillConfig::default());
        assert!(err < 1e-4, "relative gradient error {err}");
    }
}

#[test]
fn sk_gradient_matches_finite_differences_for_every_criterion() {
    let mut rng = common::rng(7);
    for criterion in Criterion::ALL {
        for centered in [true, false] {
            for _ in 0..5 {
                let case = GradCase::random(&mut rng);
                let cfg = DistillConfig { criterion, centered, beta: 1.0, ..Default::default() };
                let err = case.check(&cfg);
                assert!(err < 1e-4, "{criterion} centered={centered}: relative gradient error {err}");
            }
        }
    }
}

#[test]
fn logits_loss_gradient_matches_finite_differences() {
    let mut rng = common::rng(8);
    for _ in 0..10 {
        let case = GradCase::random(&mut rng);
        let cfg = DistillConfig { use_logits_loss: true, ..Default::default() };
        assert!(case.check(&cfg) < 1e-4);
    }
}

#[test]
fn hkd_reductions() {
    let mut rng = common::rng(9);
    for _ in 0..20 {
        let (n, k) = (rng.random_range(1..6), rng.random_range(2..5));
        let zt: Vec<f64> = (0..n * k).map(|_| 2.0 * common::normal(&mut rng)).collect();
        let zs: Vec<f64> = (0..n * k).map(|_| 2.0 * common::normal(&mut rng)).collect();
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let t = |v: &Vec<f64>| from_f64::<B, 2>(v.clone(), [n, k], &dev());
        let yl = || labels::<B>(&y, &dev());

        let ce = scalar(cross_entropy(t(&zs), yl()));
        assert!((ce - common::cross_entropy(&zs, k, &y)).abs() < 1e-12);
        assert_eq!(scalar(hkd_loss(t(&zt), t(&zs), yl(), 0.0, 4.0)), ce);

        assert!(scalar(softened_kl(t(&zs), t(&zs), 4.0)).abs() < 1e-8);
        let same = scalar(hkd_loss(t(&zs), t(&zs), yl(), 0.9, 4.0));
        assert!((same - 0.1 * ce).abs() < 1e-12);

        let kl1 = scalar(hkd_loss(t(&zt), t(&zs), yl(), 1.0, 1.0));
        assert!((kl1 - common::kl(&zt, &zs, k, 1.0)).abs() < 1e-12);
        let kl4 = scalar(softened_kl(t(&zt), t(&zs), 4.0));
        assert!((kl4 - common::kl(&zt, &zs, k, 4.0)).abs() < 1e-12);
    }
}

#[test]
fn hkd_single_sample_example() {
    let z = from_f64::<B, 2>(vec![1.0, 0.0], [1, 2], &dev());
    let v = scalar(hkd_loss(z.clone(), z, labels::<B>(&[0], &dev()), 0.9, 4.0));
    let oracle = 0.1 * -(1f64.exp() / (1f64.exp() + 1.0)).ln();
    assert!((v - oracle).abs() < 1e-12);
    assert!((v - 0.0313262).abs() < 1e-7);
}

#[test]
fn breakdown_terms_sum_to_total() {
    let mut rng = common::rng(10);
    for use_logits_loss in [false, true] {
        for _ in 0..10 {
            let case = GradCase::random(&mut rng);
            let cfg = DistillConfig { use_logits_loss, ..Default::default() };
            let student = taps::<B>(&case.s2, &case.s3, &case.zs, case.k);
            let teacher = taps::<B>(&case.t2, &case.t3, &case.zt, case.k);
            let b = total_loss(&student, Some(&teacher), labels::<B>(&case.y, &dev()), &cfg).unwrap();
            let parts = b.values();
            assert_eq!(parts.len(), if use_logits_loss { 3 } else { 2 });
            let sum: f64 = parts.iter().map(|(_, w, v)| w * v).sum();
            assert!((sum - b.total_value()).abs() <= 1e-12 * b.total_value().abs().max(1.0));
        }
    }
}

#[test]
fn weighted_sum_example() {
    // CE = 0.5, SK = 0.001, beta = 450 gives 0.95
    let cfg = DistillConfig::default();
    assert!((0.5 + cfg.beta * 0.001 - 0.95).abs() < 1e-12);
}

#[test]
fn plv_of_independent_noise_is_small() {
    let mut rng = common::rng(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a: Vec<f64> = (0..512).map(|_| common::normal(&mut rng)).collect();
        let b: Vec<f64> = (0..512).map(|_| common::normal(&mut rng)).collect();
        worst = worst.max(plv_similarity(&a, &b).unwrap());
    }
    println!("max PLV over 100 independent white-noise pairs: {worst:.4}");
    assert!(worst < 0.3);
}

#[test]
fn scalar_plv_matches_naive_phase_oracle() {
    let mut rng = common::rng(12);
    for len in [4, 5, 16, 33] {
        let a: Vec<f64> = (0..len).map(|_| common::normal(&mut rng)).collect();
        let b: Vec<f64> = (0..len).map(|_| common::normal(&mut rng)).collect();
        let want = common::pair_similarity("plv", &[a.clone()], &[b.clone()]);
        assert!((plv_similarity(&a, &b).unwrap() - want).abs() < 1e-9);
    }
}

#[test]
fn cosine_ignores_per_channel_rescaling_but_dot_does_not() {
    let mut rng = common::rng(13);
    let m = common::center(&Maps::random(&mut rng, [3, 2, 1, 6]), false);
    let mut scaled = m.clone();
    for (idx, v) in scaled.v.iter_mut().enumerate() {
        let ch = (idx / 6) % 2;
        *v *= if ch == 0 { 3.0 } else { 0.25 };
    }
    let sim = |x: &Maps, c| to_vec_f64(similarity_matrix(tensor::<B>(x), c, false, CenteringScope::Batch));
    for (a, b) in sim(&m, Criterion::Cosine).iter().zip(sim(&scaled, Criterion::Cosine)) {
        assert!((a - b).abs() < 1e-12);
    }
    let diff: f64 = sim(&m, Criterion::Dot).iter().zip(sim(&scaled, Criterion::Dot)).map(|(a, b)| (a - b).abs()).sum();
    assert!(diff > 1e-3);
}

#[test]
fn degenerate_channels_do_not_produce_nan() {
    let m = Maps { v: vec![0.0; 16], shape: [2, 2, 1, 4] };
    for criterion in Criterion::ALL {
        let v = to_vec_f64(similarity_matrix(tensor::<B>(&m), criterion, true, CenteringScope::Batch));
        assert!(v.iter().all(|x| x.is_finite()), "{criterion}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn permuting_the_batch_permutes_the_matrices(seed in any::<u64>(), n in 2usize..5, crit in 0usize..4) {
        let mut rng = common::rng(seed);
        let criterion = Criterion::ALL[crit];
        let t = Maps::random(&mut rng, [n, 2, 1, 6]);
        let s = Maps::random(&mut rng, [n, 3, 1, 5]);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let permute = |m: &Maps| {
            let per = m.v.len() / n;
            let mut v = Vec::with_capacity(m.v.len());
            for &p in &perm {
                v.extend_from_slice(&m.v[p * per..(p + 1) * per]);
            }
            Maps { v, shape: m.shape }
        };
        let sim = |m: &Maps| to_vec_f64(similarity_matrix(tensor::<B>(m), criterion, true, CenteringScope::Batch));
        let (orig, permuted) = (sim(&t), sim(&permute(&t)));
        for i in 0..n {
            for j in 0..n {
                prop_assert!((permuted[i * n + j] - orig[perm[i] * n + perm[j]]).abs() < 1e-9);
            }
        }
        let cfg = cfg_for(criterion, true);
        let loss = |a: &Maps, b: &Maps| scalar(sk_loss(&taps::<B>(a, a, &vec![0.0; n], 1), &taps::<B>(b, b, &vec![0.0; n], 1), &cfg).unwrap());
        prop_assert!((loss(&t, &s) - loss(&permute(&t), &permute(&s))).abs() < 1e-9);
    }
}
