//! Append-only, file-per-run results store.
//!
//! Layout under the store root:
//!
//! ```text
//! index.tsv                      run_id, study, role, subject, status per line
//! <study>/<run_id>.record        one RunRecord as key = value text
//! <study>/checkpoints/<run_id>.* selected parameters of a run
//! <study>/artifacts/<name>       other immutable study outputs
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place, so
//! readers never observe a partial record.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::training::RunRecord;

use super::{ExperimentError, Result};

const INDEX: &str = "index.tsv";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.display().to_string(), source }
}

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io(dir))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io(&tmp))?;
    f.write_all(contents).map_err(io(&tmp))?;
    f.sync_all().map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

fn check_name(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.starts_with('.') || s.contains(['/', '\\', '\t', '\n']) {
        return Err(ExperimentError::Store(format!("invalid {kind} name {s:?}")));
    }
    Ok(())
}

pub struct ResultsStore {
    root: PathBuf,
    append_lock: Mutex<()>,
}

impl ResultsStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io(&root))?;
        Ok(Self { root, append_lock: Mutex::new(()) })
    }

    /// Opens an existing store without creating anything.
    pub fn open_existing(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.is_dir() {
            return Err(ExperimentError::Store(format!("no results store at {}", root.display())));
        }
        Ok(Self { root, append_lock: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn study_dir(&self, study: &str) -> PathBuf {
        self.root.join(study)
    }

    fn record_path(&self, study: &str, run_id: &str) -> PathBuf {
        self.study_dir(study).join(format!("{run_id}.record"))
    }

    /// Stem under which a run's checkpoint files live.
    pub fn checkpoint_stem(&self, study: &str, run_id: &str) -> PathBuf {
        self.study_dir(study).join("checkpoints").join(run_id)
    }

    pub fn contains(&self, study: &str, run_id: &str) -> bool {
        self.record_path(study, run_id).is_file()
    }

    /// Stores `record` under `study`. A run id may be written only once.
    pub fn append(&self, study: &str, record: &RunRecord) -> Result<()> {
        check_name("study", study)?;
        check_name("run", &record.run_id)?;
        let _guard = self.append_lock.lock().unwrap_or_else(|p| p.into_inner());
        let path = self.record_path(study, &record.run_id);
        if path.exists() {
            return Err(ExperimentError::Store(format!("run {} already stored in {study}", record.run_id)));
        }
        write_atomic(&path, record.to_text().as_bytes())?;
        let index = self.root.join(INDEX);
        let mut text = match fs::read_to_string(&index) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io(&index)(e)),
        };
        let status = if record.is_completed() { "completed" } else { "aborted" };
        text.push_str(&format!("{}\t{study}\t{}\t{}\t{status}\n", record.run_id, record.role, record.subject_id));
        write_atomic(&index, text.as_bytes())
    }

    pub fn get(&self, study: &str, run_id: &str) -> Result<Option<RunRecord>> {
        let path = self.record_path(study, run_id);
        match fs::read_to_string(&path) {
            Ok(t) => Ok(Some(RunRecord::parse(&t)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io(&path)(e)),
        }
    }

    /// All records of `study`, ordered by run id.
    pub fn records(&self, study: &str) -> Result<Vec<RunRecord>> {
        let dir = self.study_dir(study);
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io(&dir)(e)),
        };
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "record"))
            .collect();
        paths.sort();
        paths
            .iter()
            .map(|p| Ok(RunRecord::parse(&fs::read_to_string(p).map_err(io(p))?)?))
            .collect()
    }

    /// Studies that hold at least one record, sorted by name.
    pub fn studies(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for e in fs::read_dir(&self.root).map_err(io(&self.root))? {
            let p = e.map_err(io(&self.root))?.path();
            if p.is_dir() {
                let name = p.file_name().unwrap().to_string_lossy().into_owned();
                if !self.records(&name)?.is_empty() {
                    out.push(name);
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// Looks a run up across studies through the index.
    pub fn find(&self, run_id: &str) -> Result<Option<(String, RunRecord)>> {
        let index = self.root.join(INDEX);
        let text = match fs::read_to_string(&index) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io(&index)(e)),
        };
        for line in text.lines() {
            let mut cols = line.split('\t');
            if cols.next() == Some(run_id) {
                let study = cols.next().unwrap_or_default().to_string();
                if let Some(r) = self.get(&study, run_id)? {
                    return Ok(Some((study, r)));
                }
            }
        }
        Ok(None)
    }

    /// Stores a named text artifact of `study`; like records, written once.
    pub fn put_artifact(&self, study: &str, name: &str, text: &str) -> Result<()> {
        check_name("study", study)?;
        check_name("artifact", name)?;
        let _guard = self.append_lock.lock().unwrap_or_else(|p| p.into_inner());
        let path = self.study_dir(study).join("artifacts").join(name);
        if path.exists() {
            return Err(ExperimentError::Store(format!("artifact {name} already stored in {study}")));
        }
        write_atomic(&path, text.as_bytes())
    }

    pub fn artifact(&self, study: &str, name: &str) -> Result<Option<String>> {
        let path = self.study_dir(study).join("artifacts").join(name);
        match fs::read_to_string(&path) {
            Ok(t) => Ok(Some(t)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io(&path)(e)),
        }
    }

    /// Names of the artifacts of `study` starting with `prefix`, sorted.
    pub fn artifacts(&self, study: &str, prefix: &str) -> Result<Vec<String>> {
        let dir = self.study_dir(study).join("artifacts");
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io(&dir)(e)),
        };
        let mut names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.starts_with(prefix) && !n.starts_with('.'))
            .collect();
        names.sort();
        Ok(names)
    }
}

/// Aggregate of the runs sharing a study cell, role, architecture, montage and subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub cell: String,
    pub role: String,
    pub architecture: String,
    pub montage: String,
    /// Subject id, or `ALL` for the mean over subjects.
    pub subject: String,
    pub n_runs: usize,
    pub n_aborted: usize,
    /// Mean test accuracy of completed runs; `None` if there are none.
    pub mean_accuracy: Option<f64>,
    pub std_accuracy: Option<f64>,
}

/// Sum of `values` in ascending order, so the result does not depend on input order.
pub fn stable_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v.iter().sum::<f64>() / v.len() as f64)
}

fn stable_std(values: &[f64]) -> Option<f64> {
    let mean = stable_mean(values)?;
    if values.len() < 2 {
        return Some(0.0);
    }
    let dev: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    let mut sorted = dev;
    sorted.sort_by(f64::total_cmp);
    Some((sorted.iter().sum::<f64>() / (values.len() - 1) as f64).sqrt())
}

/// Per-subject rows plus an `ALL` row (mean of subject means) per cell.
///
/// Depends only on the multiset of records.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    type Key = (String, String, String, String);
    let mut groups: BTreeMap<(Key, String), (usize, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let key = (
            r.tags.get("cell").cloned().unwrap_or_default(),
            r.role.to_string(),
            r.architecture.clone(),
            r.montage.clone(),
        );
        let g = groups.entry((key, r.subject_id.clone())).or_default();
        match (r.is_completed(), r.test_accuracy) {
            (true, Some(acc)) => g.1.push(acc),
            (true, None) => {}
            (false, _) => g.0 += 1,
        }
    }
    let mut rows = Vec::new();
    let mut per_cell: BTreeMap<Key, (usize, usize, Vec<f64>)> = BTreeMap::new();
    for ((key, subject), (aborted, accs)) in &groups {
        let mean = stable_mean(accs);
        let c = per_cell.entry(key.clone()).or_default();
        c.0 += accs.len() + aborted;
        c.1 += aborted;
        c.2.extend(mean);
        rows.push(SummaryRow {
            cell: key.0.clone(),
            role: key.1.clone(),
            architecture: key.2.clone(),
            montage: key.3.clone(),
            subject: subject.clone(),
            n_runs: accs.len() + aborted,
            n_aborted: *aborted,
            mean_accuracy: mean,
            std_accuracy: stable_std(accs),
        });
    }
    for (key, (n, aborted, means)) in per_cell {
        rows.push(SummaryRow {
            cell: key.0,
            role: key.1,
            architecture: key.2,
            montage: key.3,
            subject: "ALL".into(),
            n_runs: n,
            n_aborted: aborted,
            mean_accuracy: stable_mean(&means),
            std_accuracy: stable_std(&means),
        });
    }
    rows
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.4}"))
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cell", "role", "architecture", "montage", "subject", "n_runs", "n_aborted", "mean_accuracy", "std_accuracy"])?;
    for r in rows {
        w.write_record([
            r.cell.clone(),
            r.role.clone(),
            r.architecture.clone(),
            r.montage.clone(),
            r.subject.clone(),
            r.n_runs.to_string(),
            r.n_aborted.to_string(),
            fmt_opt(r.mean_accuracy),
            fmt_opt(r.std_accuracy),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::Report(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}
