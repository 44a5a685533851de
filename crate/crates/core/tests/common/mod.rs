//! Independent reference implementations used as test oracles.
//!
//! Everything here is written with explicit loops over plain `f64` buffers and
//! shares no code with the library under test.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-8;

/// A dense `N × C × H × W` activation buffer.
#[derive(Debug, Clone)]
pub struct Maps {
    pub v: Vec<f64>,
    pub shape: [usize; 4],
}

impl Maps {
    pub fn at(&self, i: usize, c: usize, h: usize, w: usize) -> f64 {
        let [_, cc, hh, ww] = self.shape;
        self.v[((i * cc + c) * hh + h) * ww + w]
    }

    pub fn random(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Self {
        let n = shape.iter().product();
        Self { v: (0..n).map(|_| normal(rng)).collect(), shape }
    }

    /// Channel map `(i, c)` as `H` rows of length `W`.
    pub fn rows(&self, i: usize, c: usize) -> Vec<Vec<f64>> {
        let [_, _, h, w] = self.shape;
        (0..h).map(|r| (0..w).map(|t| self.at(i, c, r, t)).collect()).collect()
    }
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-channel centring; `per_sample` selects one mean per (sample, channel).
pub fn center(m: &Maps, per_sample: bool) -> Maps {
    let [n, c, h, w] = m.shape;
    let mut out = m.clone();
    for ch in 0..c {
        if per_sample {
            for i in 0..n {
                let mut s = 0.0;
                for r in 0..h {
                    for t in 0..w {
                        s += m.at(i, ch, r, t);
                    }
                }
                let mean = s / (h * w) as f64;
                for r in 0..h {
                    for t in 0..w {
                        out.v[((i * c + ch) * h + r) * w + t] -= mean;
                    }
                }
            }
        } else {
            let mut s = 0.0;
            for i in 0..n {
                for r in 0..h {
                    for t in 0..w {
                        s += m.at(i, ch, r, t);
                    }
                }
            }
            let mean = s / (n * h * w) as f64;
            for i in 0..n {
                for r in 0..h {
                    for t in 0..w {
                        out.v[((i * c + ch) * h + r) * w + t] -= mean;
                    }
                }
            }
        }
    }
    out
}

/// Phase of the analytic signal.
pub fn naive_phase(x: &[f64]) -> Vec<f64> {
    naive_analytic(x).into_iter().map(|(re, im)| im.atan2(re)).collect()
}

/// Analytic signal `(re, im)` by a direct (quadratic) DFT.
pub fn naive_analytic(x: &[f64]) -> Vec<(f64, f64)> {
    let w = x.len();
    let wf = w as f64;
    let spectrum: Vec<(f64, f64)> = (0..w)
        .map(|k| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (t, &v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * t) as f64 / wf;
                re += v * a.cos();
                im += v * a.sin();
            }
            (re, im)
        })
        .collect();
    let gain = |k: usize| {
        if k == 0 || (w % 2 == 0 && k == w / 2) {
            1.0
        } else if k < w.div_ceil(2) {
            2.0
        } else {
            0.0
        }
    };
    (0..w)
        .map(|t| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (k, &(xr, xi)) in spectrum.iter().enumerate() {
                let g = gain(k);
                let a = 2.0 * PI * (k * t) as f64 / wf;
                re += g * (xr * a.cos() - xi * a.sin());
                im += g * (xr * a.sin() + xi * a.cos());
            }
            (re / wf, im / wf)
        })
        .collect()
}

/// Similarity of two flattened channel maps given as rows.
pub fn pair_similarity(criterion: &str, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let fa: Vec<f64> = a.iter().flatten().copied().collect();
    let fb: Vec<f64> = b.iter().flatten().copied().collect();
    match criterion {
        "cosine" => {
            let dot: f64 = fa.iter().zip(&fb).map(|(x, y)| x * y).sum();
            let na = fa.iter().map(|x| x * x).sum::<f64>().sqrt().max(EPS);
            let nb = fb.iter().map(|x| x * x).sum::<f64>().sqrt().max(EPS);
            dot / (na * nb)
        }
        "dot" => fa.iter().zip(&fb).map(|(x, y)| x * y).sum(),
        "l2" => -fa.iter().zip(&fb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        "plv" => {
            // vanishing analytic amplitude contributes a zero phasor
            let (mut re, mut im, mut count) = (0.0, 0.0, 0.0);
            for (ra, rb) in a.iter().zip(b) {
                let (za, zb) = (naive_analytic(ra), naive_analytic(rb));
                for (&(ar, ai), &(br, bi)) in za.iter().zip(&zb) {
                    let (ma, mb) = (ar.hypot(ai).max(EPS), br.hypot(bi).max(EPS));
                    let (ar, ai, br, bi) = (ar / ma, ai / ma, br / mb, bi / mb);
                    re += ar * br + ai * bi;
                    im += ai * br - ar * bi;
                    count += 1.0;
                }
            }
            (re / count).hypot(im / count)
        }
        other => panic!("unknown criterion {other}"),
    }
}

/// Row-major `N × N` similarity matrix by nested loops.
pub fn similarity(m: &Maps, criterion: &str, centered: bool, per_sample: bool) -> Vec<f64> {
    let m = if centered { center(m, per_sample) } else { m.clone() };
    let [n, c, _, _] = m.shape;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for ch in 0..c {
                s += pair_similarity(criterion, &m.rows(i, ch), &m.rows(j, ch));
            }
            out[i * n + j] = s / c as f64;
        }
    }
    out
}

/// Mean squared difference of two equally sized matrices.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Softmax cross-entropy averaged over rows.
pub fn cross_entropy(logits: &[f64], k: usize, y: &[usize]) -> f64 {
    let n = y.len();
    let mut total = 0.0;
    for i in 0..n {
        let row = &logits[i * k..(i + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - row[y[i]];
    }
    total / n as f64
}

pub fn softmax(row: &[f64], temperature: f64) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|z| ((z - max) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Batch-mean `KL(p_t ‖ p_s)` at temperature `T`.
pub fn kl(zt: &[f64], zs: &[f64], k: usize, temperature: f64) -> f64 {
    let n = zt.len() / k;
    let mut total = 0.0;
    for i in 0..n {
        let pt = softmax(&zt[i * k..(i + 1) * k], temperature);
        let ps = softmax(&zs[i * k..(i + 1) * k], temperature);
        for c in 0..k {
            if pt[c] > 0.0 {
                total += pt[c] * (pt[c].ln() - ps[c].ln());
            }
        }
    }
    total / n as f64
}

/// Two-sided Wilcoxon signed-rank p-value (twice the smaller tail) by
/// enumerating all sign patterns.
/// Zero differences are dropped; ties share mid-ranks.
pub fn signed_rank_enumerated(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = midranks(&abs);
    let observed: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let (mut low, mut high) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|k| mask >> k & 1 == 1).map(|k| ranks[k]).sum();
        if w <= observed + 1e-9 {
            low += 1;
        }
        if w >= observed - 1e-9 {
            high += 1;
        }
    }
    (2.0 * low.min(high) as f64 / (1u64 << n) as f64).min(1.0)
}

/// Two-sided Wilcoxon rank-sum p-value by enumerating all group assignments.
pub fn rank_sum_enumerated(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let (m, total) = (a.len(), pooled.len());
    let observed: f64 = ranks[..m].iter().sum();
    let (mut low, mut high, mut count) = (0u64, 0u64, 0u64);
    for mask in 0u64..(1 << total) {
        if mask.count_ones() as usize != m {
            continue;
        }
        count += 1;
        let w: f64 = (0..total).filter(|k| mask >> k & 1 == 1).map(|k| ranks[k]).sum();
        if w <= observed + 1e-9 {
            low += 1;
        }
        if w >= observed - 1e-9 {
            high += 1;
        }
    }
    (2.0 * low.min(high) as f64 / count as f64).min(1.0)
}

/// 1-based ranks with ties replaced by their average, by pairwise counting.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

