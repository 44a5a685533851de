//! EEG ingestion and preprocessing: containers, resampling, band-pass filtering,
//! epoching, montage subsetting, class-balanced validation splits and paired
//! teacher/student mini-batches.

mod batch;
mod container;
mod epoch;
pub mod gdf;
mod montage;
mod signal;
mod split;
mod synthetic;

pub use batch::{paired_batches, PairedBatch, PairedBatches};
pub use container::{load_container, write_container, Container, FORMAT_VERSION};
pub use epoch::{epoch, preprocess, PreprocessConfig};
pub use montage::{select_montage, Montage, BCIC_IV_2A_CHANNELS};
pub use signal::{bandpass, resample, ButterworthBandpass};
pub use split::{split_indices, split_train_val, SplitIndices};
pub use synthetic::{synthetic, SyntheticSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header field `{field}`: {reason}")]
    Header { field: String, reason: String },
    #[error("payload size mismatch: expected {expected} bytes, found {found}")]
    PayloadSize { expected: u64, found: u64 },
    #[error("unsupported format version {0}")]
    FormatVersion(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid recording: {0}")]
    Validation(String),
    #[error("epoching failed at event {index}: {reason}")]
    Epoch { index: usize, reason: String },
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("montage error: {0}")]
    Montage(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("reader error: {0}")]
    Reader(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Continuous multichannel recording prior to epoching.
///
/// `signal` is channel-major: `signal[ch * n_samples + t]`, in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    signal: Vec<f32>,
    n_samples: usize,
    fs: f64,
    channel_names: Vec<String>,
    events: Vec<(usize, u32)>,
    subject_id: String,
    session_id: String,
}

impl RawRecording {
    pub fn new(
        signal: Vec<f32>,
        fs: f64,
        channel_names: Vec<String>,
        events: Vec<(usize, u32)>,
        subject_id: impl Into<String>,
        session_id: impl Into<String>,
    ) -> Result<Self> {
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(DataError::Validation(format!("fs must be positive, got {fs}")));
        }
        validate_channel_names(&channel_names)?;
        let n_channels = channel_names.len();
        if signal.len() % n_channels != 0 {
            return Err(DataError::Validation(format!(
                "signal length {} is not a multiple of {n_channels} channels",
                signal.len()
            )));
        }
        let n_samples = signal.len() / n_channels;
        // Coincident events are legal (e.g. a rejection marker on a trial start).
        for (i, w) in events.windows(2).enumerate() {
            if w[1].0 < w[0].0 {
                return Err(DataError::Validation(format!(
                    "event {} onset {} precedes event {} onset {}",
                    i + 1,
                    w[1].0,
                    i,
                    w[0].0
                )));
            }
        }
        if let Some((i, (onset, _))) = events.iter().enumerate().find(|(_, e)| e.0 >= n_samples) {
            return Err(DataError::Validation(format!(
                "event {i} onset {onset} outside signal of {n_samples} samples"
            )));
        }
        Ok(Self {
            signal,
            n_samples,
            fs,
            channel_names,
            events,
            subject_id: subject_id.into(),
            session_id: session_id.into(),
        })
    }

    pub fn signal(&self) -> &[f32] {
        &self.signal
    }
    pub fn channel(&self, ch: usize) -> &[f32] {
        &self.signal[ch * self.n_samples..(ch + 1) * self.n_samples]
    }
    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }
    pub fn fs(&self) -> f64 {
        self.fs
    }
    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }
    pub fn events(&self) -> &[(usize, u32)] {
        &self.events
    }
    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }
    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    /// Keeps only the named channels, in the given order.
    pub fn pick_channels(&self, names: &[String]) -> Result<Self> {
        let mut signal = Vec::with_capacity(names.len() * self.n_samples);
        for name in names {
            let idx = self
                .channel_names
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| DataError::UnknownChannel(name.clone()))?;
            signal.extend_from_slice(self.channel(idx));
        }
        Self::new(
            signal,
            self.fs,
            names.to_vec(),
            self.events.clone(),
            self.subject_id.clone(),
            self.session_id.clone(),
        )
    }

    /// Resamples every channel to `fs_dst`, rescaling event onsets.
    pub fn resampled(&self, fs_dst: f64) -> Result<Self> {
        if fs_dst == self.fs {
            return Ok(self.clone());
        }
        let mut signal = Vec::new();
        let mut out_len = 0;
        for ch in 0..self.n_channels() {
            let x: Vec<f64> = self.channel(ch).iter().map(|&v| v as f64).collect();
            let y = resample(&x, self.fs, fs_dst)?;
            out_len = y.len();
            signal.extend(y.into_iter().map(|v| v as f32));
        }
        let ratio = fs_dst / self.fs;
        let events = self
            .events
            .iter()
            .map(|&(onset, code)| {
                let scaled = (onset as f64 * ratio).round() as usize;
                (scaled.min(out_len.saturating_sub(1)), code)
            })
            .collect();
        Self::new(
            signal,
            fs_dst,
            self.channel_names.clone(),
            events,
            self.subject_id.clone(),
            self.session_id.clone(),
        )
    }

    /// Zero-phase band-pass on every channel.
    pub fn bandpassed(&self, low: f64, high: f64) -> Result<Self> {
        let filter = ButterworthBandpass::design(4, low, high, self.fs)?;
        let mut signal = Vec::with_capacity(self.signal.len());
        for ch in 0..self.n_channels() {
            let x: Vec<f64> = self.channel(ch).iter().map(|&v| v as f64).collect();
            signal.extend(filter.filtfilt(&x).into_iter().map(|v| v as f32));
        }
        Ok(Self { signal, ..self.clone() })
    }
}

/// Trials × channels × samples tensor with one integer label per trial.
///
/// Storage is trial-major: `trials[(trial * n_channels + ch) * n_samples + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochedDataset {
    trials: Vec<f32>,
    labels: Vec<usize>,
    n_channels: usize,
    n_samples: usize,
    n_classes: usize,
    fs: f64,
    channel_names: Vec<String>,
    subject_id: String,
    session_id: String,
}

impl EpochedDataset {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        trials: Vec<f32>,
        labels: Vec<usize>,
        n_samples: usize,
        n_classes: usize,
        fs: f64,
        channel_names: Vec<String>,
        subject_id: impl Into<String>,
        session_id: impl Into<String>,
    ) -> Result<Self> {
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(DataError::Validation(format!("fs must be positive, got {fs}")));
        }
        validate_channel_names(&channel_names)?;
        let n_channels = channel_names.len();
        let expected = labels.len() * n_channels * n_samples;
        if trials.len() != expected {
            return Err(DataError::Validation(format!(
                "trial buffer holds {} values, expected {} trials x {n_channels} channels x {n_samples} samples",
                trials.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(DataError::Validation(format!(
                "label {bad} outside [0, {n_classes})"
            )));
        }
        Ok(Self {
            trials,
            labels,
            n_channels,
            n_samples,
            n_classes,
            fs,
            channel_names,
            subject_id: subject_id.into(),
            session_id: session_id.into(),
        })
    }

    pub fn n_trials(&self) -> usize {
        self.labels.len()
    }
    pub fn n_channels(&self) -> usize {
        self.n_channels
    }
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
    pub fn fs(&self) -> f64 {
        self.fs
    }
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }
    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }
    pub fn session_id(&self) -> &str {
        &self.session_id
    }
    pub fn data(&self) -> &[f32] {
        &self.trials
    }

    /// Channel-major block of one trial.
    pub fn trial(&self, index: usize) -> &[f32] {
        let len = self.n_channels * self.n_samples;
        &self.trials[index * len..(index + 1) * len]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Position of each named channel within this dataset.
    pub fn channel_indices(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.channel_names
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| DataError::UnknownChannel(n.clone()))
            })
            .collect()
    }

    /// Subset of trials, in the order given.
    pub fn select_trials(&self, indices: &[usize]) -> Self {
        let len = self.n_channels * self.n_samples;
        let mut trials = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            trials.extend_from_slice(self.trial(i));
        }
        Self {
            trials,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            channel_names: self.channel_names.clone(),
            subject_id: self.subject_id.clone(),
            session_id: self.session_id.clone(),
            ..*self
        }
    }

    /// Restricts to channels at the given positions (in that order).
    pub fn select_channel_indices(&self, indices: &[usize]) -> Self {
        let mut trials = Vec::with_capacity(self.n_trials() * indices.len() * self.n_samples);
        for trial in 0..self.n_trials() {
            let block = self.trial(trial);
            for &ch in indices {
                trials.extend_from_slice(&block[ch * self.n_samples..(ch + 1) * self.n_samples]);
            }
        }
        Self {
            trials,
            labels: self.labels.clone(),
            n_channels: indices.len(),
            channel_names: indices.iter().map(|&i| self.channel_names[i].clone()).collect(),
            subject_id: self.subject_id.clone(),
            session_id: self.session_id.clone(),
            ..*self
        }
    }

    /// Trial-wise concatenation; used for subject-independent training pools.
    pub fn concat(parts: &[&EpochedDataset], subject_id: &str) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| DataError::Argument("cannot concatenate zero datasets".into()))?;
        let mut trials = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.channel_names != first.channel_names
                || p.n_samples != first.n_samples
                || p.n_classes != first.n_classes
                || p.fs != first.fs
            {
                return Err(DataError::Argument(format!(
                    "dataset {}/{} is incompatible with {}/{}",
                    p.subject_id, p.session_id, first.subject_id, first.session_id
                )));
            }
            trials.extend_from_slice(&p.trials);
            labels.extend_from_slice(&p.labels);
        }
        Self::new(
            trials,
            labels,
            first.n_samples,
            first.n_classes,
            first.fs,
            first.channel_names.clone(),
            subject_id,
            first.session_id.clone(),
        )
    }
}

fn validate_channel_names(names: &[String]) -> Result<()> {
    if names.is_empty() {
        return Err(DataError::Validation("no channels".into()));
    }
    for (i, n) in names.iter().enumerate() {
        if n.is_empty() || n.contains(',') || n.chars().any(char::is_whitespace) {
            return Err(DataError::Validation(format!("invalid channel name {n:?}")));
        }
        if names[..i].contains(n) {
            return Err(DataError::Validation(format!("duplicate channel name {n}")));
        }
    }
    Ok(())
}
