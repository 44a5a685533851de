//! Rational polyphase resampling and zero-phase Butterworth band-pass filtering.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::{DataError, Result};

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Reduced `(up, down)` with `up / down ≈ fs_dst / fs_src` (millihertz resolution).
fn rational_ratio(fs_src: f64, fs_dst: f64) -> (u64, u64) {
    let src = (fs_src * 1000.0).round().max(1.0) as u64;
    let dst = (fs_dst * 1000.0).round().max(1.0) as u64;
    let g = gcd(src, dst);
    (dst / g, src / g)
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64).powi(2);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Kaiser-windowed sinc low-pass with DC gain 1; `cutoff` is relative to Nyquist.
fn lowpass_fir(half_len: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    let len = 2 * half_len + 1;
    let denom = bessel_i0(beta);
    let mut h: Vec<f64> = (0..len)
        .map(|k| {
            let m = k as f64 - half_len as f64;
            let r = m / half_len as f64;
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom;
            cutoff * sinc(cutoff * m) * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Polyphase rational resampling with an anti-aliasing Kaiser FIR.
///
/// Output length is `round(len · fs_dst / fs_src)`; equal rates return the input unchanged.
pub fn resample(x: &[f64], fs_src: f64, fs_dst: f64) -> Result<Vec<f64>> {
    if !(fs_src > 0.0 && fs_dst > 0.0) || !fs_src.is_finite() || !fs_dst.is_finite() {
        return Err(DataError::Argument(format!(
            "sampling rates must be positive, got {fs_src} -> {fs_dst}"
        )));
    }
    if fs_src == fs_dst {
        return Ok(x.to_vec());
    }
    let (up, down) = rational_ratio(fs_src, fs_dst);
    let (up_u, down_u) = (up as usize, down as usize);
    let max_rate = up_u.max(down_u);
    let half_len = 10 * max_rate;
    let h: Vec<f64> = lowpass_fir(half_len, 1.0 / max_rate as f64, 5.0)
        .into_iter()
        .map(|v| v * up as f64)
        .collect();

    let out_len = (x.len() as f64 * fs_dst / fs_src).round() as usize;
    let n = x.len() as i64;
    let mut y = Vec::with_capacity(out_len);
    for i in 0..out_len {
        // Position on the upsampled grid, shifted by the filter delay.
        let t = (i * down_u + half_len) as i64;
        let first = (t % up as i64) as usize;
        let mut acc = 0.0;
        let mut j = first;
        while j < h.len() {
            let idx = (t - j as i64) / up as i64;
            if idx < 0 {
                break;
            }
            if idx < n {
                acc += h[j] * x[idx as usize];
            }
            j += up_u;
        }
        y.push(acc);
    }
    Ok(y)
}

/// Digital Butterworth band-pass as cascaded second-order sections.
#[derive(Debug, Clone)]
pub struct ButterworthBandpass {
    /// `[b0, b1, b2, a1, a2]` per section, `a0 = 1`.
    sections: Vec<[f64; 5]>,
}

impl ButterworthBandpass {
    /// `order` is the low-pass prototype order; the band-pass has `2·order` poles.
    pub fn design(order: usize, low: f64, high: f64, fs: f64) -> Result<Self> {
        if order == 0 {
            return Err(DataError::Argument("filter order must be at least 1".into()));
        }
        if !(0.0 < low && low < high && high < fs / 2.0) {
            return Err(DataError::Argument(format!(
                "band [{low}, {high}] Hz must satisfy 0 < low < high < fs/2 = {}",
                fs / 2.0
            )));
        }
        let two_fs = 2.0 * fs;
        let warp = |f: f64| two_fs * (PI * f / fs).tan();
        let (wl, wh) = (warp(low), warp(high));
        let bw = wh - wl;
        let w0_sq = wl * wh;

        let mut poles = Vec::with_capacity(2 * order);
        for k in 0..order {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let p = Complex64::from_polar(1.0, theta) * (bw / 2.0);
            let disc = (p * p - w0_sq).sqrt();
            poles.push(p + disc);
            poles.push(p - disc);
        }
        // Bilinear transform: analog zeros at s = 0 (order of them) map to z = 1,
        // the remaining `order` zeros at infinity map to z = -1.
        let digital: Vec<Complex64> = poles.iter().map(|&p| (two_fs + p) / (two_fs - p)).collect();
        let mut gain = Complex64::new(bw.powi(order as i32), 0.0);
        for &p in &poles {
            gain /= two_fs - p;
        }
        gain *= two_fs.powi(order as i32);

        let mut upper: Vec<Complex64> = digital.into_iter().filter(|p| p.im >= 0.0).collect();
        upper.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap_or(std::cmp::Ordering::Equal));
        if upper.len() != order {
            return Err(DataError::Argument("failed to pair filter poles".into()));
        }
        let sections = upper
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let k = if i == 0 { gain.re } else { 1.0 };
                [k, 0.0, -k, -2.0 * p.re, p.norm_sqr()]
            })
            .collect();
        Ok(Self { sections })
    }

    fn steady_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|&[b0, b1, b2, a1, a2]| {
                let g = (b0 + b1 + b2) / (1.0 + a1 + a2);
                let z2 = b2 - a2 * g;
                let z1 = b1 - a1 * g + z2;
                let zi = [z1 * scale, z2 * scale];
                scale *= g;
                zi
            })
            .collect()
    }

    fn run(&self, x: &mut [f64], zi: &[[f64; 2]], x0: f64) {
        for (&[b0, b1, b2, a1, a2], z) in self.sections.iter().zip(zi) {
            let (mut z1, mut z2) = (z[0] * x0, z[1] * x0);
            for v in x.iter_mut() {
                let input = *v;
                let y = b0 * input + z1;
                z1 = b1 * input - a1 * y + z2;
                z2 = b2 * input - a2 * y;
                *v = y;
            }
        }
    }

    /// Single forward pass from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        let zeros = vec![[0.0; 2]; self.sections.len()];
        self.run(&mut y, &zeros, 0.0);
        y
    }

    /// Forward-backward (zero-phase) filtering with odd-extension padding and
    /// steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        if x.len() < 2 {
            return x.to_vec();
        }
        let padlen = (3 * (2 * self.sections.len() + 1)).min(x.len() - 1);
        let n = x.len();
        let mut ext = Vec::with_capacity(n + 2 * padlen);
        ext.extend((0..padlen).map(|i| 2.0 * x[0] - x[padlen - i]));
        ext.extend_from_slice(x);
        ext.extend((0..padlen).map(|i| 2.0 * x[n - 1] - x[n - 2 - i]));

        let zi = self.steady_state();
        let first = ext[0];
        self.run(&mut ext, &zi, first);
        ext.reverse();
        let first = ext[0];
        self.run(&mut ext, &zi, first);
        ext.reverse();
        ext[padlen..padlen + n].to_vec()
    }

    /// Magnitude response at frequency `f` (Hz) for sampling rate `fs`.
    pub fn gain_at(&self, f: f64, fs: f64) -> f64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * f / fs);
        let zinv = z.inv();
        self.sections
            .iter()
            .map(|&[b0, b1, b2, a1, a2]| {
                let num = b0 + zinv * b1 + zinv * zinv * b2;
                let den = 1.0 + zinv * a1 + zinv * zinv * a2;
                (num / den).norm()
            })
            .product()
    }
}

/// 4th-order Butterworth band-pass applied forward and backward.
pub fn bandpass(x: &[f64], low: f64, high: f64, fs: f64) -> Result<Vec<f64>> {
    Ok(ButterworthBandpass::design(4, low, high, fs)?.filtfilt(x))
}
