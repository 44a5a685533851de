use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use crate::data::gdf::{parse_cue_labels, GdfReader, RecordingReader};
use crate::data::{load_container, preprocess, synthetic, write_container, Container, EpochedDataset, PreprocessConfig, SyntheticSpec};

use super::config::{DataConfig, DataSourceKind};
use super::{ExperimentError, Result};

/// Path of the prepared container of one subject session.
pub fn container_path(root: &Path, subject: &str, session: &str) -> PathBuf {
    root.join(format!("{subject}_{session}.hdr"))
}

/// Digits of a subject id, e.g. `01` for `S01`.
fn subject_number(subject: &str) -> String {
    subject.chars().filter(char::is_ascii_digit).collect()
}

fn fill(pattern: &str, subject: &str, session: &str) -> String {
    pattern
        .replace("{num}", &subject_number(subject))
        .replace("{subject}", subject)
        .replace("{session}", session)
}

/// Loads (and caches) epoched sessions per subject.
pub struct DataSource {
    cfg: DataConfig,
    cache: Mutex<BTreeMap<(String, String), Arc<EpochedDataset>>>,
}

impl DataSource {
    pub fn new(cfg: &DataConfig) -> Self {
        Self { cfg: cfg.clone(), cache: Mutex::new(BTreeMap::new()) }
    }

    pub fn config(&self) -> &DataConfig {
        &self.cfg
    }

    pub fn session(&self, subject: &str, session: &str) -> Result<Arc<EpochedDataset>> {
        let key = (subject.to_string(), session.to_string());
        if let Some(d) = self.cache.lock().unwrap_or_else(|p| p.into_inner()).get(&key) {
            return Ok(d.clone());
        }
        let d = Arc::new(match self.cfg.source {
            DataSourceKind::Synthetic => self.synthetic(subject, session)?,
            DataSourceKind::Containers => {
                let path = container_path(&self.cfg.root, subject, session);
                if !path.is_file() {
                    return Err(ExperimentError::MissingData(format!(
                        "no prepared data for {subject} session {session} at {}; run `prepare` first",
                        path.display()
                    )));
                }
                load_container(&path)?.into_epoched()?
            }
        });
        self.cache.lock().unwrap_or_else(|p| p.into_inner()).insert(key, d.clone());
        Ok(d)
    }

    pub fn train(&self, subject: &str) -> Result<Arc<EpochedDataset>> {
        self.session(subject, &self.cfg.train_session)
    }

    pub fn test(&self, subject: &str) -> Result<Arc<EpochedDataset>> {
        self.session(subject, &self.cfg.test_session)
    }

    /// Training sessions of every subject in `subjects` except `held_out`, pooled.
    pub fn pooled_train(&self, subjects: &[String], held_out: &str, pooled_id: &str) -> Result<EpochedDataset> {
        let parts = subjects
            .iter()
            .filter(|s| s.as_str() != held_out)
            .map(|s| self.train(s))
            .collect::<Result<Vec<_>>>()?;
        if parts.is_empty() {
            return Err(ExperimentError::Config(format!("no subjects besides {held_out} to pool")));
        }
        let refs: Vec<&EpochedDataset> = parts.iter().map(|p| p.as_ref()).collect();
        Ok(EpochedDataset::concat(&refs, pooled_id)?)
    }

    fn synthetic(&self, subject: &str, session: &str) -> Result<EpochedDataset> {
        let s = &self.cfg.synthetic;
        let spec = SyntheticSpec {
            n_trials: s.n_trials,
            n_classes: s.n_classes,
            n_samples: s.n_samples,
            fs: s.fs,
            signal_gain: s.signal_gain,
            subject_id: subject.to_string(),
            session_id: session.to_string(),
            ..SyntheticSpec::bcic_like(s.n_trials, s.n_classes)
        };
        let digest = Sha256::digest(format!("{subject}|{session}").as_bytes());
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        Ok(synthetic(&spec, seed)?)
    }
}

/// Converts raw recordings (or synthetic data) of `subjects` into containers
/// under `cfg.root`; returns the written header paths.
pub fn prepare(cfg: &DataConfig, preprocess_cfg: &PreprocessConfig, subjects: &[String]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let source = DataSource::new(cfg);
    for subject in subjects {
        for session in [&cfg.train_session, &cfg.test_session] {
            let dataset = match cfg.source {
                DataSourceKind::Synthetic => source.synthetic(subject, session)?,
                DataSourceKind::Containers => {
                    let raw = cfg.raw_dir.join(fill(&cfg.raw_pattern, subject, session));
                    let labels = cfg.raw_dir.join(fill(&cfg.labels_pattern, subject, session));
                    let mut reader = GdfReader::bcic_iv_2a();
                    if labels.is_file() {
                        let text = std::fs::read_to_string(&labels)
                            .map_err(|e| ExperimentError::Io { path: labels.display().to_string(), source: e })?;
                        reader = reader.with_cue_labels(parse_cue_labels(&text)?);
                    }
                    let rec = reader.read(&raw, subject, session)?;
                    preprocess(&rec, preprocess_cfg)?
                }
            };
            let path = container_path(&cfg.root, subject, session);
            write_container(&path, &Container::Epoched(dataset))?;
            log::info!("wrote {}", path.display());
            written.push(path);
        }
    }
    Ok(written)
}
