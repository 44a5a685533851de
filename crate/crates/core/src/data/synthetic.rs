use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{EpochedDataset, Result};

/// Parameters of a synthetic motor-imagery-like dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_trials: usize,
    pub n_classes: usize,
    pub n_samples: usize,
    pub fs: f64,
    pub channel_names: Vec<String>,
    pub subject_id: String,
    pub session_id: String,
    /// Amplitude of the class-dependent rhythm relative to unit noise.
    pub signal_gain: f64,
}

impl SyntheticSpec {
    /// `n_trials` trials of one second at 128 Hz over the 22-channel layout.
    pub fn bcic_like(n_trials: usize, n_classes: usize) -> Self {
        Self {
            n_trials,
            n_classes,
            n_samples: 128,
            fs: 128.0,
            channel_names: super::BCIC_IV_2A_CHANNELS.iter().map(|s| s.to_string()).collect(),
            subject_id: "S01".into(),
            session_id: "T".into(),
            signal_gain: 1.0,
        }
    }
}

/// Trials of white noise plus a 10 Hz rhythm whose amplitude over the channels
/// depends on the class; labels cycle through the classes so every class is
/// equally represented.
///
/// Each class owns a smooth spatial pattern, so a spatial filter over any
/// reasonable channel subset can separate the classes, better with more channels.
pub fn synthetic(spec: &SyntheticSpec, seed: u64) -> Result<EpochedDataset> {
    let c = spec.channel_names.len();
    let t = spec.n_samples;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patterns: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|k| {
            (0..c)
                .map(|ch| {
                    let x = ch as f64 / c.max(1) as f64;
                    (2.0 * PI * (x + k as f64 / spec.n_classes as f64)).cos().max(0.0)
                })
                .collect()
        })
        .collect();
    let mut trials = Vec::with_capacity(spec.n_trials * c * t);
    let mut labels = Vec::with_capacity(spec.n_trials);
    for i in 0..spec.n_trials {
        let k = i % spec.n_classes;
        labels.push(k);
        let phase = rng.random_range(0.0..2.0 * PI);
        for gain in &patterns[k] {
            for s in 0..t {
                let noise: f64 = rng.sample(StandardNormal);
                let rhythm = (2.0 * PI * 10.0 * s as f64 / spec.fs + phase).sin();
                trials.push((noise + spec.signal_gain * gain * rhythm) as f32);
            }
        }
    }
    EpochedDataset::new(
        trials,
        labels,
        t,
        spec.n_classes,
        spec.fs,
        spec.channel_names.clone(),
        spec.subject_id.clone(),
        spec.session_id.clone(),
    )
}
