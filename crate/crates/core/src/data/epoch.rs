use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DataError, EpochedDataset, RawRecording, Result};

/// Cuts one trial per mapped event, `[onset + start, onset + start + len)` seconds.
///
/// Events whose code is absent from `class_map` are skipped. The class count is
/// one more than the largest mapped label.
pub fn epoch(
    rec: &RawRecording,
    window_start_s: f64,
    window_len_s: f64,
    class_map: &BTreeMap<u32, usize>,
) -> Result<EpochedDataset> {
    if !(window_len_s > 0.0) {
        return Err(DataError::Argument(format!("window length must be positive, got {window_len_s}")));
    }
    let n_classes = class_map
        .values()
        .max()
        .map(|m| m + 1)
        .ok_or_else(|| DataError::Argument("empty class map".into()))?;
    let fs = rec.fs();
    let n_samples = (window_len_s * fs).round() as usize;
    let offset = (window_start_s * fs).round() as i64;
    let n_ch = rec.n_channels();

    let mut trials = Vec::new();
    let mut labels = Vec::new();
    for (index, &(onset, code)) in rec.events().iter().enumerate() {
        let Some(&label) = class_map.get(&code) else { continue };
        let start = onset as i64 + offset;
        let end = start + n_samples as i64;
        if start < 0 || end > rec.n_samples() as i64 {
            return Err(DataError::Epoch {
                index,
                reason: format!(
                    "window [{start}, {end}) exceeds signal of {} samples",
                    rec.n_samples()
                ),
            });
        }
        let start = start as usize;
        for ch in 0..n_ch {
            trials.extend_from_slice(&rec.channel(ch)[start..start + n_samples]);
        }
        labels.push(label);
    }
    EpochedDataset::new(
        trials,
        labels,
        n_samples,
        n_classes,
        fs,
        rec.channel_names().to_vec(),
        rec.subject_id(),
        rec.session_id(),
    )
}

/// Canonical pipeline: resample, band-pass, epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_fs: f64,
    pub band_low: f64,
    pub band_high: f64,
    pub window_start_s: f64,
    pub window_len_s: f64,
    /// Event code to class label.
    pub class_map: BTreeMap<u32, usize>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        // BCIC-IV-2a cue codes: left hand, right hand, feet, tongue.
        let class_map = [(769, 0), (770, 1), (771, 2), (772, 3)].into_iter().collect();
        Self {
            target_fs: 128.0,
            band_low: 4.0,
            band_high: 38.0,
            window_start_s: 0.0,
            window_len_s: 4.0,
            class_map,
        }
    }
}

pub fn preprocess(rec: &RawRecording, cfg: &PreprocessConfig) -> Result<EpochedDataset> {
    let rec = rec.resampled(cfg.target_fs)?.bandpassed(cfg.band_low, cfg.band_high)?;
    epoch(&rec, cfg.window_start_s, cfg.window_len_s, &cfg.class_map)
}
