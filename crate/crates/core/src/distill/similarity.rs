use burn::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{CenteringScope, Criterion, DistillError, Result};
use crate::tensor::from_f64;

/// Guard used in every denominator and square root below.
pub const EPS: f64 = 1e-8;

/// Subtracts the per-channel mean from `f` (`N × C × H × W`).
///
/// With [`CenteringScope::Batch`] one scalar per channel is taken over the
/// whole batch and both spatial axes; with [`CenteringScope::Sample`] each
/// sample's channel map is centred on its own mean.
pub fn zero_center<B: Backend>(f: Tensor<B, 4>, scope: CenteringScope) -> Tensor<B, 4> {
    let [n, c, h, w] = f.dims();
    let mean = match scope {
        CenteringScope::Batch => f
            .clone()
            .swap_dims(0, 1)
            .reshape([c, n * h * w])
            .mean_dim(1)
            .reshape([1, c, 1, 1]),
        CenteringScope::Sample => f.clone().reshape([n, c, h * w]).mean_dim(2).reshape([n, c, 1, 1]),
    };
    f - mean
}

/// `N × N` matrix of channel-averaged similarities between the samples of `f`.
pub fn similarity_matrix<B: Backend>(
    f: Tensor<B, 4>,
    criterion: Criterion,
    centered: bool,
    scope: CenteringScope,
) -> Tensor<B, 2> {
    let f = if centered { zero_center(f, scope) } else { f };
    let [n, c, h, w] = f.dims();
    match criterion {
        Criterion::Plv => plv_matrix(f),
        _ => {
            // C × N × L: one row per (channel, sample)
            let x = f.reshape([n, c, h * w]).swap_dims(0, 1);
            let per_channel = match criterion {
                Criterion::Cosine => {
                    let norm = x.clone().powi_scalar(2).sum_dim(2).clamp_min(EPS * EPS).sqrt();
                    let u = x / norm;
                    u.clone().matmul(u.swap_dims(1, 2))
                }
                Criterion::Dot => x.clone().matmul(x.swap_dims(1, 2)),
                Criterion::L2 => {
                    let sq = x.clone().powi_scalar(2).sum_dim(2);
                    let gram = x.clone().matmul(x.swap_dims(1, 2));
                    // the expansion is inexact on the diagonal, where the distance is 0 by definition
                    let off_diagonal = Tensor::<B, 2>::eye(n, &gram.device()).neg().add_scalar(1.0).unsqueeze::<3>();
                    let d2 = (sq.clone() + sq.swap_dims(1, 2) - gram * 2.0).clamp_min(0.0) * off_diagonal;
                    // negated distance; the guard keeps the root differentiable at 0
                    (d2 + EPS * EPS).sqrt().sub_scalar(EPS).neg()
                }
                Criterion::Plv => unreachable!(),
            };
            per_channel.mean_dim(0).reshape([n, n])
        }
    }
}

/// PLV similarity where every row of every channel map is treated as one
/// time series and phases are compared position by position.
fn plv_matrix<B: Backend>(f: Tensor<B, 4>) -> Tensor<B, 2> {
    let [n, c, h, w] = f.dims();
    let device = f.device();
    let hilbert = from_f64::<B, 2>(hilbert_matrix(w), [w, w], &device);
    let re = f.reshape([n * c * h, w]);
    let im = re.clone().matmul(hilbert);
    let amp = (re.clone().powi_scalar(2) + im.clone().powi_scalar(2)).clamp_min(EPS * EPS).sqrt();
    let to_rows = |t: Tensor<B, 2>| t.reshape([n, c, h * w]).swap_dims(0, 1);
    let ur = to_rows(re / amp.clone());
    let ui = to_rows(im / amp);
    let l = (h * w) as f64;
    let real = ur.clone().matmul(ur.clone().swap_dims(1, 2)) + ui.clone().matmul(ui.clone().swap_dims(1, 2));
    let imag = ui.clone().matmul(ur.clone().swap_dims(1, 2)) - ur.matmul(ui.swap_dims(1, 2));
    let plv = (real.powi_scalar(2) + imag.powi_scalar(2)).clamp_min(EPS * EPS).sqrt() / l;
    plv.clamp(0.0, 1.0).mean_dim(0).reshape([n, n])
}

/// Row-major `W × W` matrix `M` with `x · M` equal to the imaginary part of
/// the FFT-based analytic signal of the row vector `x`.
pub fn hilbert_matrix(w: usize) -> Vec<f64> {
    let mut m = vec![0.0; w * w];
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(w);
    let ifft = planner.plan_fft_inverse(w);
    let gains = analytic_gains(w);
    for j in 0..w {
        let mut buf = vec![Complex::new(0.0, 0.0); w];
        buf[j].re = 1.0;
        fft.process(&mut buf);
        for (b, g) in buf.iter_mut().zip(&gains) {
            *b *= g;
        }
        ifft.process(&mut buf);
        for (k, b) in buf.iter().enumerate() {
            m[j * w + k] = b.im / w as f64;
        }
    }
    m
}

/// Spectral weights turning a DFT into the DFT of the analytic signal.
fn analytic_gains(w: usize) -> Vec<f64> {
    let mut g = vec![0.0; w];
    g[0] = 1.0;
    if w % 2 == 0 {
        g[w / 2] = 1.0;
        g[1..w / 2].fill(2.0);
    } else {
        g[1..w.div_ceil(2)].fill(2.0);
    }
    g
}

/// Instantaneous phase of the analytic signal of `x`.
pub fn instantaneous_phase(x: &[f64]) -> Vec<f64> {
    let w = x.len();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(w).process(&mut buf);
    for (b, g) in buf.iter_mut().zip(analytic_gains(w)) {
        *b *= g;
    }
    planner.plan_fft_inverse(w).process(&mut buf);
    buf.iter().map(|z| z.im.atan2(z.re)).collect()
}

/// Phase locking value `|mean_t exp(i (φ_a(t) − φ_b(t)))|` of two series.
pub fn plv_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(DistillError::Argument(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 4 {
        return Err(DistillError::Argument(format!("series of length {} is shorter than 4", a.len())));
    }
    let (pa, pb) = (instantaneous_phase(a), instantaneous_phase(b));
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in pa.iter().zip(&pb) {
        re += (x - y).cos();
        im += (x - y).sin();
    }
    let n = a.len() as f64;
    Ok(((re / n).hypot(im / n)).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use crate::tensor::{from_f64, to_vec_f64};
    use burn::backend::NdArray;

    type B = NdArray<f64>;

    fn sine(n: usize, freq: f64, fs: f64, phase: f64) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs + phase).sin()).collect()
    }

    fn t4(v: Vec<f64>, shape: [usize; 4]) -> Tensor<B, 4> {
        from_f64(v, shape, &Default::default())
    }

    #[test]
    fn centring_two_maps_uses_one_slab_mean() {
        let f = t4(vec![1.0, 0.0, 0.0, 2.0], [2, 1, 1, 2]);
        let c = to_vec_f64(zero_center(f, CenteringScope::Batch));
        assert_eq!(c, vec![0.25, -0.75, -0.75, 1.25]);
    }

    #[test]
    fn sample_scope_centres_each_map() {
        let f = t4(vec![1.0, 0.0, 0.0, 2.0], [2, 1, 1, 2]);
        let c = to_vec_f64(zero_center(f, CenteringScope::Sample));
        assert_eq!(c, vec![0.5, -0.5, -1.0, 1.0]);
    }

    #[test]
    fn constant_maps_centre_to_zero() {
        let f = t4(vec![3.5; 24], [2, 3, 2, 2]);
        assert!(to_vec_f64(zero_center(f, CenteringScope::Batch)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_negatives_have_cosine_minus_one() {
        let f = t4(vec![1.0, 0.0, 0.0, 1.0], [2, 1, 1, 2]);
        let m = to_vec_f64(similarity_matrix(f, Criterion::Cosine, true, CenteringScope::Batch));
        assert!((m[1] + 1.0).abs() < 1e-12);
        assert!((m[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_channel_contributes_zero() {
        let f = t4(vec![2.0; 8], [2, 1, 1, 4]);
        let m = to_vec_f64(similarity_matrix(f, Criterion::Cosine, true, CenteringScope::Batch));
        assert!(m.iter().all(|v| *v == 0.0), "{m:?}");
    }

    #[test]
    fn hilbert_of_cosine_is_sine() {
        let w = 64;
        let m = hilbert_matrix(w);
        let x: Vec<f64> = (0..w).map(|i| (2.0 * PI * 4.0 * i as f64 / w as f64).cos()).collect();
        for k in 0..w {
            let h: f64 = (0..w).map(|j| x[j] * m[j * w + k]).sum();
            let expect = (2.0 * PI * 4.0 * k as f64 / w as f64).sin();
            assert!((h - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn plv_of_identical_and_shifted_series_is_one() {
        let a = sine(256, 8.0, 128.0, 0.0);
        assert!((plv_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = sine(256, 8.0, 128.0, 1.1);
        assert!((plv_similarity(&a, &b).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn plv_rejects_bad_lengths() {
        assert!(plv_similarity(&[0.0; 5], &[0.0; 6]).is_err());
        assert!(plv_similarity(&[0.0; 3], &[0.0; 3]).is_err());
    }
}
