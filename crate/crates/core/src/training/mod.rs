//! Teacher pretraining, student distillation and evaluation.

mod record;

pub use record::{epoch_log_csv, EpochLog, Role, RunRecord, RunStatus};

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use burn::backend::{Autodiff, NdArray};
use burn::module::AutodiffModule;
use burn::optim::decay::WeightDecayConfig;
use burn::optim::{AdamConfig, GradientsParams, Optimizer};
use burn::prelude::*;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{paired_batches, split_train_val, DataError, EpochedDataset, Montage, PairedBatch, PairedBatches};
use crate::distill::{total_loss, DistillConfig, DistillError};
use crate::models::{
    build_model, parameter_hash, save_checkpoint, Architecture, ArchitectureSpec, CheckpointManifest, Model,
    ModelError, TapSet,
};
use crate::tensor::{from_f32, labels, to_vec_f32};

/// Backend used for gradient-based training.
pub type TrainBackend = Autodiff<NdArray<f32>>;
/// Backend used for inference and checkpoints.
pub type EvalBackend = NdArray<f32>;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("montage mismatch: {0}")]
    Montage(String),
    #[error("malformed run record: {0}")]
    Record(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Distill(#[from] DistillError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Loss used to pick the checkpoint during distillation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationObjective {
    /// The same objective the student is trained on.
    #[default]
    Total,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Fraction of the training trials held out for checkpoint selection.
    pub val_fraction: f64,
    /// Drives initialization, batch order and dropout masks.
    pub seed: u64,
    /// Drives the train/validation partition, shared by all seeds.
    pub split_seed: u64,
    pub architecture: Architecture,
    pub montage: String,
    pub validation_objective: ValidationObjective,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Absent for teacher and baseline runs.
    pub distill: Option<DistillConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 5e-4,
            weight_decay: 0.1,
            batch_size: 128,
            val_fraction: 0.125,
            seed: 0,
            split_seed: 0,
            architecture: Architecture::SccNet,
            montage: "22".into(),
            validation_objective: ValidationObjective::Total,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            distill: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be ≥ 0, got {}", self.weight_decay));
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return bad(format!("adam_epsilon must be positive, got {}", self.adam_epsilon));
        }
        if let Some(d) = &self.distill {
            d.validate()?;
        }
        Ok(())
    }

    /// Hash of every setting except the seed, so repeats of one configuration share it.
    pub fn digest(&self) -> String {
        let text = toml::to_string(&TrainConfig { seed: 0, ..self.clone() }).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn objective(&self) -> DistillConfig {
        self.distill.clone().unwrap_or_else(DistillConfig::cross_entropy_only)
    }
}

/// Result of a training run: the record, the selected parameters and the per-epoch log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: RunRecord,
    /// Parameters of the lowest-validation-loss epoch (initial parameters if no epoch finished).
    pub model: Model<EvalBackend>,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    /// Scores the selected model on `test` restricted to `montage` and stores the accuracy in the record.
    pub fn score(&mut self, test: &EpochedDataset, montage: &Montage) -> Result<f64> {
        let acc = evaluate(&self.model, test, montage)?;
        if self.record.is_completed() {
            self.record.test_accuracy = Some(acc);
        }
        Ok(acc)
    }

    pub fn manifest(&self) -> CheckpointManifest {
        CheckpointManifest {
            spec: self.model.spec(),
            init_seed: self.record.seed,
            config_digest: self.record.config_digest.clone(),
            best_epoch: (self.record.best_epoch > 0).then_some(self.record.best_epoch),
            param_hash: self.record.param_hash.clone(),
        }
    }

    /// Writes `<stem>.params`, `<stem>.manifest` and `<stem>.log.csv`.
    pub fn save(&self, stem: &Path) -> Result<CheckpointManifest> {
        let manifest = save_checkpoint(&self.model, &self.manifest(), stem)?;
        let log_path = stem.with_extension("log.csv");
        std::fs::write(&log_path, epoch_log_csv(&self.log))
            .map_err(|e| ModelError::Io { path: log_path.display().to_string(), source: e })?;
        Ok(manifest)
    }
}

/// Trains a teacher on the full montage of `train` under cross-entropy.
pub fn pretrain_teacher(train: &EpochedDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.distill.is_some() {
        return Err(TrainError::Config("a teacher run takes no distill section".into()));
    }
    let montage = Montage::root(cfg.montage.clone(), train.channel_names().to_vec())?;
    run(Role::Teacher, train, &montage, None, cfg)
}

/// Trains a student on the `m_student` channels of `train_hd` while a frozen teacher sees all channels.
pub fn distill_student(
    train_hd: &EpochedDataset,
    m_student: &Montage,
    teacher: &Model<EvalBackend>,
    teacher_run_id: &str,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.distill.is_none() {
        return Err(TrainError::Config("distillation needs a distill section".into()));
    }
    let ts = teacher.spec();
    if ts.n_channels != train_hd.n_channels() || ts.n_samples != train_hd.n_samples() || ts.n_classes != train_hd.n_classes() {
        return Err(TrainError::Montage(format!(
            "teacher {ts} expects {}×{} inputs with {} classes, data has {}×{} with {}",
            ts.n_channels,
            ts.n_samples,
            ts.n_classes,
            train_hd.n_channels(),
            train_hd.n_samples(),
            train_hd.n_classes()
        )));
    }
    run(Role::StudentDistilled, train_hd, m_student, Some((teacher, teacher_run_id)), cfg)
}

/// Cross-entropy training of a student on the `m_student` channels of `train_hd`.
pub fn train_student_baseline(train_hd: &EpochedDataset, m_student: &Montage, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.distill.is_some() {
        return Err(TrainError::Config("a baseline run takes no distill section".into()));
    }
    run(Role::StudentBaseline, train_hd, m_student, None, cfg)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Percent of trials of `test` (restricted to `montage`) classified correctly in evaluation mode.
pub fn evaluate<B: Backend>(model: &Model<B>, test: &EpochedDataset, montage: &Montage) -> Result<f64> {
    let spec = model.spec();
    if montage.len() != spec.n_channels {
        return Err(TrainError::Montage(format!(
            "model {spec} cannot read montage {} with {} channels",
            montage.name(),
            montage.len()
        )));
    }
    if test.n_samples() != spec.n_samples {
        return Err(TrainError::Montage(format!("model expects {} samples per trial, test set has {}", spec.n_samples, test.n_samples())));
    }
    if test.n_trials() == 0 {
        return Err(TrainError::Config("test set is empty".into()));
    }
    let batches = PairedBatches::sequential(test, montage, 256)
        .map_err(|e| TrainError::Montage(format!("test set lacks montage {}: {e}", montage.name())))?;
    let device = B::Device::default();
    let mut correct = 0usize;
    for b in batches {
        let logits = model.forward(student_input::<B>(&b, &device), None)?;
        let k = spec.n_classes;
        let values = to_vec_f32(logits);
        correct += b.y.iter().enumerate().filter(|&(i, &y)| argmax(&values[i * k..(i + 1) * k]) == y).count();
    }
    Ok(100.0 * correct as f64 / test.n_trials() as f64)
}

/// Loss and accuracy of `model` on `val` under the run's validation objective.
pub fn validation_loss<B: Backend>(
    model: &Model<B>,
    teacher: Option<&Model<B>>,
    val: &EpochedDataset,
    m_student: &Montage,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let objective = match cfg.validation_objective {
        ValidationObjective::Total => cfg.objective(),
        ValidationObjective::CrossEntropy => DistillConfig::cross_entropy_only(),
    };
    let device = B::Device::default();
    let k = model.spec().n_classes;
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    for b in PairedBatches::sequential(val, m_student, cfg.batch_size)? {
        let taps = model.forward_with_taps(student_input::<B>(&b, &device), None)?;
        let teacher_taps = match teacher {
            Some(t) if objective.needs_teacher() => Some(t.forward_with_taps(teacher_input::<B>(&b, &device), None)?),
            _ => None,
        };
        let values = to_vec_f32(taps.logits.clone());
        correct += b.y.iter().enumerate().filter(|&(i, &y)| argmax(&values[i * k..(i + 1) * k]) == y).count();
        let loss = total_loss(&taps, teacher_taps.as_ref(), labels::<B>(&b.y, &device), &objective)?;
        loss_sum += loss.total_value() * b.len() as f64;
    }
    let n = val.n_trials() as f64;
    Ok((loss_sum / n, 100.0 * correct as f64 / n))
}

/// Train/validation partition used by every run of `cfg`.
pub fn split(train: &EpochedDataset, cfg: &TrainConfig) -> Result<(EpochedDataset, EpochedDataset)> {
    Ok(split_train_val(train, cfg.val_fraction, cfg.split_seed)?)
}

fn student_input<B: Backend>(b: &PairedBatch, device: &B::Device) -> Tensor<B, 3> {
    from_f32(b.x_student.clone(), [b.len(), b.student_channels, b.n_samples], device)
}

fn teacher_input<B: Backend>(b: &PairedBatch, device: &B::Device) -> Tensor<B, 3> {
    from_f32(b.x_teacher.clone(), [b.len(), b.teacher_channels, b.n_samples], device)
}

fn lift(t: TapSet<EvalBackend>) -> TapSet<TrainBackend> {
    TapSet {
        lf1: Tensor::from_inner(t.lf1),
        lf2: Tensor::from_inner(t.lf2),
        lf3: Tensor::from_inner(t.lf3),
        logits: Tensor::from_inner(t.logits),
    }
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Id a run of `cfg` gets; a pure function of its inputs, so finished runs can be looked up before training.
pub fn run_id_for(role: Role, cfg: &TrainConfig, subject: &str, montage: &str, teacher_run_id: Option<&str>) -> String {
    let teacher = if role == Role::StudentDistilled { teacher_run_id } else { None };
    let key = format!("{role}|{}|{}|{subject}|{montage}|{}", cfg.digest(), cfg.seed, teacher.unwrap_or("-"));
    hex::encode(&Sha256::digest(key.as_bytes())[..8])
}

struct Best {
    model: Model<EvalBackend>,
    loss: f64,
    epoch: usize,
}

fn run(
    role: Role,
    train_hd: &EpochedDataset,
    m_student: &Montage,
    teacher: Option<(&Model<EvalBackend>, &str)>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    type B = TrainBackend;
    let device = &Default::default();
    cfg.validate()?;
    let started = Instant::now();
    let objective = cfg.objective();
    let teacher_model = teacher.map(|t| t.0).filter(|_| objective.needs_teacher());
    let spec = ArchitectureSpec::new(cfg.architecture, m_student.len(), train_hd.n_samples(), train_hd.n_classes());
    let (train, val) = split(train_hd, cfg)?;
    if train.n_trials() == 0 {
        return Err(TrainError::Config("no training trials left after the validation split".into()));
    }
    // surfaces a montage the data cannot provide before any work is done
    train_hd.channel_indices(m_student.channels())?;

    let mut model: Model<B> = build_model(spec, cfg.seed, device)?;
    let mut optim = AdamConfig::new()
        .with_beta_1(cfg.adam_beta1 as f32)
        .with_beta_2(cfg.adam_beta2 as f32)
        .with_epsilon(cfg.adam_epsilon as f32)
        .with_weight_decay((cfg.weight_decay > 0.0).then(|| WeightDecayConfig::new(cfg.weight_decay as f32)))
        .init::<B, Model<B>>();
    let mut shuffle_rng = rng_stream(cfg.seed, 1);
    let mut dropout_rng = rng_stream(cfg.seed, 2);

    let digest = cfg.digest();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<Best> = None;
    let mut status = RunStatus::Completed;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut total_sum = 0.0;
        let mut term_sums: BTreeMap<&'static str, f64> = BTreeMap::new();
        for (bi, batch) in paired_batches(&train, m_student, cfg.batch_size, shuffle_rng.next_u64())?.enumerate() {
            let teacher_taps = match teacher_model {
                Some(t) => Some(lift(t.forward_with_taps(teacher_input::<EvalBackend>(&batch, device), None)?)),
                None => None,
            };
            let taps = model.forward_with_taps(student_input::<B>(&batch, device), Some(&mut dropout_rng))?;
            let loss = total_loss(&taps, teacher_taps.as_ref(), labels::<B>(&batch.y, device), &objective)?;
            let value = loss.total_value();
            if !value.is_finite() {
                status = RunStatus::Aborted(format!("training loss became {value} at epoch {epoch}, batch {}", bi + 1));
                break 'epochs;
            }
            let n = batch.len() as f64;
            total_sum += value * n;
            for (name, _, v) in loss.values() {
                *term_sums.entry(name).or_default() += v * n;
            }
            let grads = GradientsParams::from_grads(loss.total.backward(), &model);
            model = optim.step(cfg.learning_rate, model, grads);
        }
        let n_train = train.n_trials() as f64;
        let train_total = total_sum / n_train;
        let snapshot = model.valid();
        let (val_loss, val_accuracy) = if val.n_trials() > 0 {
            let inner_teacher = teacher.map(|t| t.0);
            validation_loss(&snapshot, inner_teacher, &val, m_student, cfg)?
        } else {
            (train_total, f64::NAN)
        };
        log.push(EpochLog {
            epoch,
            train_total,
            train_terms: term_sums.into_iter().map(|(k, v)| (k, v / n_train)).collect(),
            val_loss,
            val_accuracy,
        });
        log::debug!("{role} epoch {epoch}: train {train_total:.5} val {val_loss:.5} acc {val_accuracy:.2}");
        if !val_loss.is_finite() {
            status = RunStatus::Aborted(format!("validation loss became {val_loss} at epoch {epoch}"));
            break;
        }
        if best.as_ref().is_none_or(|b| val_loss < b.loss) {
            best = Some(Best { model: snapshot, loss: val_loss, epoch });
        }
    }

    let best = best.unwrap_or_else(|| Best { model: model.valid(), loss: f64::NAN, epoch: 0 });
    if let RunStatus::Aborted(why) = &status {
        log::warn!("{role} run with seed {} aborted: {why}", cfg.seed);
    }
    let teacher_run_id = match role {
        Role::StudentDistilled => teacher.map(|t| t.1.to_string()),
        _ => None,
    };
    let record = RunRecord {
        run_id: run_id_for(role, cfg, train_hd.subject_id(), m_student.name(), teacher_run_id.as_deref()),
        config_digest: digest,
        seed: cfg.seed,
        role,
        architecture: spec.to_string(),
        montage: m_student.name().to_string(),
        subject_id: train_hd.subject_id().to_string(),
        teacher_run_id,
        test_accuracy: None,
        best_val_loss: best.loss,
        best_epoch: best.epoch,
        status,
        param_hash: parameter_hash(&best.model),
        wall_time_s: started.elapsed().as_secs_f64(),
        tags: BTreeMap::new(),
    };
    Ok(TrainOutcome { record, model: best.model, log })
}

