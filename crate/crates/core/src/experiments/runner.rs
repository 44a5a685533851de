//! Turns a study into training jobs, runs them on a bounded thread pool and
//! stores every outcome.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::data::{select_montage, EpochedDataset, Montage};
use crate::distill::DistillConfig;
use crate::models::{load_checkpoint, Architecture, Model};
use crate::training::{
    distill_student, evaluate, pretrain_teacher, run_id_for, split, train_student_baseline, EvalBackend, Role,
    RunRecord, TrainConfig,
};

use super::config::{combo_label, parse_combo, ArchPair, EliminationMode, ExperimentConfig, KdMode, Study};
use super::elimination::backward_eliminate;
use super::source::DataSource;
use super::store::{summarize, summary_csv, write_atomic, ResultsStore};
use super::{ExperimentError, Result};

/// Prefix of the subject id of a subject-independent teacher.
pub const SI_PREFIX: &str = "SI-";

/// One training run to schedule.
#[derive(Debug, Clone)]
pub struct Job {
    pub role: Role,
    /// Subject whose training session is used; for a subject-independent
    /// teacher, the held-out subject.
    pub subject: String,
    /// Train on every other subject instead of `subject`.
    pub subject_independent: bool,
    pub architecture: Architecture,
    pub montage: Montage,
    pub seed: u64,
    pub distill: Option<DistillConfig>,
    /// Teacher job whose selected model supervises this one.
    pub teacher: Option<Box<Job>>,
    pub keep_checkpoint: bool,
    pub tags: BTreeMap<String, String>,
}

impl Job {
    fn data_subject(&self) -> String {
        if self.subject_independent {
            format!("{SI_PREFIX}{}", self.subject)
        } else {
            self.subject.clone()
        }
    }

    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            architecture: self.architecture,
            montage: self.montage.name().to_string(),
            seed: self.seed,
            distill: self.distill.clone(),
            ..base.clone()
        }
    }

    /// Run id this job's record will carry.
    pub fn run_id(&self, base: &TrainConfig) -> String {
        let teacher = self.teacher.as_ref().map(|t| t.run_id(base));
        run_id_for(self.role, &self.train_config(base), &self.data_subject(), self.montage.name(), teacher.as_deref())
    }
}

/// Study execution context.
pub struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    store: &'a ResultsStore,
    data: DataSource,
    pool: rayon::ThreadPool,
    teachers: Mutex<BTreeMap<String, Model<EvalBackend>>>,
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a ExperimentConfig, store: &'a ResultsStore) -> Result<Self> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| ExperimentError::Scheduling(e.to_string()))?;
        Ok(Self { cfg, store, data: DataSource::new(&cfg.data), pool, teachers: Mutex::new(BTreeMap::new()) })
    }

    pub fn data(&self) -> &DataSource {
        &self.data
    }

    fn tags(cell: &str) -> BTreeMap<String, String> {
        [("cell".to_string(), cell.to_string())].into_iter().collect()
    }

    pub fn teacher_job(&self, arch: Architecture, subject: &str, subject_independent: bool) -> Job {
        let cell = if subject_independent { "teacher-si" } else { "teacher" };
        Job {
            role: Role::Teacher,
            subject: subject.to_string(),
            subject_independent,
            architecture: arch,
            montage: self.cfg.parent_montage(),
            seed: self.cfg.teacher_seed,
            distill: None,
            teacher: None,
            keep_checkpoint: true,
            tags: Self::tags(cell),
        }
    }

    pub fn student_job(
        &self,
        pair: ArchPair,
        subject: &str,
        montage: &Montage,
        seed: u64,
        distill: Option<(DistillConfig, Job)>,
        cell: &str,
    ) -> Job {
        let (role, distill, teacher) = match distill {
            Some((d, t)) => (Role::StudentDistilled, Some(d), Some(Box::new(t))),
            None => (Role::StudentBaseline, None, None),
        };
        Job {
            role,
            subject: subject.to_string(),
            subject_independent: false,
            architecture: pair.student,
            montage: montage.clone(),
            seed,
            distill,
            teacher,
            keep_checkpoint: self.cfg.save_student_checkpoints,
            tags: {
                let mut t = Self::tags(cell);
                t.insert("pair".into(), pair_label(pair));
                t
            },
        }
    }

    fn training_data(&self, job: &Job) -> Result<Arc<EpochedDataset>> {
        if job.subject_independent {
            Ok(Arc::new(self.data.pooled_train(&self.cfg.subjects, &job.subject, &job.data_subject())?))
        } else {
            self.data.train(&job.subject)
        }
    }

    fn teacher_model(&self, study: &str, run_id: &str) -> Result<Model<EvalBackend>> {
        if let Some(m) = self.teachers.lock().unwrap_or_else(|p| p.into_inner()).get(run_id) {
            return Ok(m.clone());
        }
        let record = self
            .store
            .get(study, run_id)?
            .ok_or_else(|| ExperimentError::Scheduling(format!("teacher run {run_id} has not been trained")))?;
        if !record.is_completed() {
            return Err(ExperimentError::Scheduling(format!("teacher run {run_id} was aborted")));
        }
        let (model, _) = load_checkpoint::<EvalBackend>(&self.store.checkpoint_stem(study, run_id), &Default::default())?;
        self.teachers.lock().unwrap_or_else(|p| p.into_inner()).insert(run_id.to_string(), model.clone());
        Ok(model)
    }

    /// Runs `job` unless its record is already stored, and returns the record.
    pub fn run_job(&self, study: &str, job: &Job) -> Result<RunRecord> {
        let tc = job.train_config(&self.cfg.train);
        let run_id = job.run_id(&self.cfg.train);
        if let Some(r) = self.store.get(study, &run_id)? {
            return Ok(r);
        }
        let train = self.training_data(job)?;
        let mut outcome = match job.role {
            Role::Teacher => pretrain_teacher(&train, &tc)?,
            Role::StudentBaseline => train_student_baseline(&train, &job.montage, &tc)?,
            Role::StudentDistilled => {
                let teacher = job.teacher.as_ref().ok_or_else(|| ExperimentError::Scheduling("distillation job without teacher".into()))?;
                let teacher_id = teacher.run_id(&self.cfg.train);
                let model = self.teacher_model(study, &teacher_id)?;
                distill_student(&train, &job.montage, &model, &teacher_id, &tc)?
            }
        };
        debug_assert_eq!(outcome.record.run_id, run_id);
        let test = self.data.test(&job.subject)?;
        outcome.score(&test, &job.montage)?;
        let mut tags = job.tags.clone();
        if let Some(row) = outcome.record.best_epoch.checked_sub(1).and_then(|i| outcome.log.get(i)) {
            if row.val_accuracy.is_finite() {
                tags.insert("val_accuracy".into(), format!("{:?}", row.val_accuracy));
            }
        }
        outcome.record.tags = tags;
        if job.keep_checkpoint {
            outcome.save(&self.store.checkpoint_stem(study, &run_id))?;
        }
        if job.role == Role::Teacher {
            self.teachers.lock().unwrap_or_else(|p| p.into_inner()).insert(run_id.clone(), outcome.model.clone());
        }
        log::info!(
            "{study}: {} {} {} seed {} -> {}",
            outcome.record.role,
            outcome.record.architecture,
            outcome.record.subject_id,
            outcome.record.seed,
            outcome.record.test_accuracy.map_or_else(|| "aborted".to_string(), |a| format!("{a:.2}%"))
        );
        self.store.append(study, &outcome.record)?;
        Ok(outcome.record)
    }

    /// Runs independent jobs concurrently; every job is attempted before the first error is returned.
    pub fn run_jobs(&self, study: &str, jobs: &[Job]) -> Result<Vec<RunRecord>> {
        let results: Vec<Result<RunRecord>> = self.pool.install(|| jobs.par_iter().map(|j| self.run_job(study, j)).collect());
        let mut out = Vec::with_capacity(results.len());
        let mut first_err = None;
        for r in results {
            match r {
                Ok(rec) => out.push(rec),
                Err(e) => {
                    log::error!("{study}: {e}");
                    first_err.get_or_insert(e);
                }
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    /// Runs the teacher jobs referenced by `students`, then the students.
    pub fn run_with_teachers(&self, study: &str, students: &[Job]) -> Result<Vec<RunRecord>> {
        let mut teachers: BTreeMap<String, Job> = BTreeMap::new();
        for s in students {
            if let Some(t) = &s.teacher {
                teachers.entry(t.run_id(&self.cfg.train)).or_insert_with(|| (**t).clone());
            }
        }
        let teachers: Vec<Job> = teachers.into_values().collect();
        let mut records = self.run_jobs(study, &teachers)?;
        records.extend(self.run_jobs(study, students)?);
        Ok(records)
    }

    fn montages(&self) -> Result<Vec<Montage>> {
        self.cfg.montages.iter().map(|m| self.cfg.montage(m)).collect()
    }

    /// Jobs of a study except elimination, which is sequential in its steps.
    pub fn plan(&self, study: Study) -> Result<Vec<Job>> {
        let cfg = self.cfg;
        let mut jobs = Vec::new();
        let montages = self.montages()?;
        let cells: Vec<(String, Option<DistillConfig>)> = match study {
            Study::LayerSweep => {
                let mut cells = vec![("baseline".to_string(), None)];
                for c in &cfg.layer_sweep.combos {
                    let pairs = parse_combo(c)?;
                    cells.push((combo_label(&pairs), Some(DistillConfig { layer_pairs: pairs, ..cfg.distill.clone() })));
                }
                cells
            }
            Study::MontageCompare => cfg
                .compare
                .methods
                .iter()
                .map(|m| (m.as_str().to_string(), m.distill(&cfg.distill)))
                .collect(),
            Study::Ablation => {
                let mut cells = vec![("baseline".to_string(), None)];
                for &criterion in &cfg.ablation.criteria {
                    for &centered in &cfg.ablation.centered {
                        let name = format!("{criterion}-{}", if centered { "centered" } else { "uncentered" });
                        cells.push((name, Some(DistillConfig { criterion, centered, ..cfg.distill.clone() })));
                    }
                }
                cells
            }
            Study::CrossSubject => {
                for pair in &cfg.pairs {
                    for montage in &montages {
                        for student in &cfg.subjects {
                            let mut teachers: Vec<(String, Job)> = cfg
                                .subjects
                                .iter()
                                .map(|t| (t.clone(), self.teacher_job(pair.teacher, t, false)))
                                .collect();
                            if cfg.cross_subject.include_si {
                                teachers.push(("SI".into(), self.teacher_job(pair.teacher, student, true)));
                            }
                            for &seed in &cfg.seeds {
                                jobs.push(self.student_job(*pair, student, montage, seed, None, "baseline"));
                                for (name, t) in &teachers {
                                    let mut j = self.student_job(
                                        *pair,
                                        student,
                                        montage,
                                        seed,
                                        Some((cfg.distill.clone(), t.clone())),
                                        &format!("teacher={name}"),
                                    );
                                    j.tags.insert("teacher_subject".into(), name.clone());
                                    jobs.push(j);
                                }
                            }
                        }
                    }
                }
                return Ok(jobs);
            }
            Study::Elimination => return Err(ExperimentError::Scheduling("elimination is not a flat job list".into())),
        };
        for pair in &cfg.pairs {
            for montage in &montages {
                for subject in &cfg.subjects {
                    let teacher = self.teacher_job(pair.teacher, subject, false);
                    for &seed in &cfg.seeds {
                        for (cell, distill) in &cells {
                            let d = distill.clone().map(|d| (d, teacher.clone()));
                            jobs.push(self.student_job(*pair, subject, montage, seed, d, cell));
                        }
                    }
                }
            }
        }
        Ok(jobs)
    }

    /// Teacher jobs whose records report the teacher's own test accuracy.
    fn teacher_rows(&self) -> Vec<Job> {
        let mut out = Vec::new();
        for pair in &self.cfg.pairs {
            for s in &self.cfg.subjects {
                out.push(self.teacher_job(pair.teacher, s, false));
            }
        }
        out
    }

    /// Runs a whole study and refreshes its `summary.csv`; finished runs are reused.
    pub fn run_study(&self, study: Study) -> Result<Vec<RunRecord>> {
        let name = study.as_str();
        let mut records = match study {
            Study::Elimination => self.run_elimination()?,
            _ => {
                let jobs = self.plan(study)?;
                let mut r = self.run_jobs(name, &self.teacher_rows())?;
                r.extend(self.run_with_teachers(name, &jobs)?);
                r
            }
        };
        records.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        records.dedup_by(|a, b| a.run_id == b.run_id);
        self.write_summary(name)?;
        Ok(records)
    }

    pub fn write_summary(&self, study: &str) -> Result<()> {
        let rows = summarize(&self.store.records(study)?);
        write_atomic(&self.store.study_dir(study).join("summary.csv"), summary_csv(&rows)?.as_bytes())
    }

    /// Artifact name of one elimination run.
    pub fn elimination_key(pair: ArchPair, subject: &str, kd: KdMode, seed: u64) -> String {
        format!("elim-{}-{subject}-{}-{seed}", pair.student, kd.as_str())
    }

    fn run_elimination(&self) -> Result<Vec<RunRecord>> {
        let cfg = self.cfg;
        let study = Study::Elimination.as_str();
        let start = cfg.montage(&cfg.elimination.montage)?;
        let parent = cfg.parent_montage();
        let mut records = Vec::new();
        for pair in &cfg.pairs {
            for subject in &cfg.subjects {
                let teacher = self.teacher_job(pair.teacher, subject, false);
                if cfg.elimination.kd.contains(&KdMode::Sk) {
                    records.extend(self.run_jobs(study, std::slice::from_ref(&teacher))?);
                }
                for &kd in &cfg.elimination.kd {
                    for &seed in &cfg.elimination.seeds {
                        let key = Self::elimination_key(*pair, subject, kd, seed);
                        if self.store.artifact(study, &key)?.is_some() {
                            continue;
                        }
                        let distill = match kd {
                            KdMode::None => None,
                            KdMode::Sk => Some((cfg.distill.clone(), teacher.clone())),
                        };
                        let job_for = |m: &Montage| {
                            let mut j = self.student_job(*pair, subject, m, seed, distill.clone(), &format!("elim-{}", kd.as_str()));
                            j.tags.insert("channels".into(), m.channels().len().to_string());
                            j
                        };
                        let result = match cfg.elimination.mode {
                            EliminationMode::Retrain => {
                                let evaluator = |set: &[String]| -> Result<f64> {
                                    let names: Vec<&str> = set.iter().map(String::as_str).collect();
                                    let m = parent.subset(set.join("+"), &names)?;
                                    let r = self.run_job(study, &job_for(&m))?;
                                    Ok(r.tags.get("val_accuracy").and_then(|v| v.parse().ok()).unwrap_or(f64::NEG_INFINITY))
                                };
                                self.pool.install(|| backward_eliminate(evaluator, start.channels()))?
                            }
                            EliminationMode::Mask => {
                                let mut job = job_for(&start);
                                job.keep_checkpoint = true;
                                let r = self.run_job(study, &job)?;
                                records.push(r.clone());
                                let (model, _) = load_checkpoint::<EvalBackend>(&self.store.checkpoint_stem(study, &r.run_id), &Default::default())?;
                                let train = self.data.train(subject)?;
                                let (_, val) = split(&train, &job.train_config(&cfg.train))?;
                                let val = select_montage(&val, &start)?;
                                // Models are Send but not Sync; each evaluation works on a cheap clone.
                                let model = Mutex::new(model);
                                let evaluator = |set: &[String]| -> Result<f64> {
                                    let masked = mask_channels(&val, set);
                                    let m = model.lock().unwrap_or_else(|p| p.into_inner()).clone();
                                    Ok(evaluate(&m, &masked, &start)?)
                                };
                                self.pool.install(|| backward_eliminate(evaluator, start.channels()))?
                            }
                        };
                        self.store.put_artifact(study, &key, &result.to_text())?;
                    }
                }
            }
        }
        records.extend(self.store.records(study)?);
        Ok(records)
    }

    /// Trains (or reuses) the first teacher and one run of `role` for the first
    /// subject, pair, montage and seed of the config.
    pub fn single(&self, role: Role) -> Result<RunRecord> {
        let cfg = self.cfg;
        let (pair, subject, seed) = (cfg.pairs[0], &cfg.subjects[0], cfg.seeds[0]);
        let montage = self.cfg.montage(&cfg.montages[0])?;
        let study = "single";
        let job = match role {
            Role::Teacher => Job { seed, ..self.teacher_job(pair.teacher, subject, false) },
            Role::StudentBaseline => self.student_job(pair, subject, &montage, seed, None, "baseline"),
            Role::StudentDistilled => {
                let teacher = self.teacher_job(pair.teacher, subject, false);
                self.student_job(pair, subject, &montage, seed, Some((cfg.distill.clone(), teacher)), "sk")
            }
        };
        let records = self.run_with_teachers(study, std::slice::from_ref(&job))?;
        self.write_summary(study)?;
        Ok(records.last().cloned().expect("the job itself ran"))
    }
}

/// `teacher->student` architecture label stored in the `pair` tag.
pub fn pair_label(pair: ArchPair) -> String {
    format!("{}->{}", pair.teacher, pair.student)
}

/// Copy of `d` with every channel not in `keep` set to zero.
pub fn mask_channels(d: &EpochedDataset, keep: &[String]) -> EpochedDataset {
    let (c, t) = (d.n_channels(), d.n_samples());
    let mut values = d.data().to_vec();
    let dropped: Vec<usize> = (0..c).filter(|&ch| !keep.contains(&d.channel_names()[ch])).collect();
    for trial in values.chunks_mut(c * t) {
        for &ch in &dropped {
            trial[ch * t..(ch + 1) * t].fill(0.0);
        }
    }
    EpochedDataset::new(
        values,
        d.labels().to_vec(),
        t,
        d.n_classes(),
        d.fs(),
        d.channel_names().to_vec(),
        d.subject_id(),
        d.session_id(),
    )
    .expect("same shape as a valid dataset")
}
