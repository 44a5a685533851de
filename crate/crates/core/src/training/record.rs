use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Teacher,
    StudentBaseline,
    StudentDistilled,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Teacher => "teacher",
            Self::StudentBaseline => "student-baseline",
            Self::StudentDistilled => "student-distilled",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self, TrainError> {
        [Self::Teacher, Self::StudentBaseline, Self::StudentDistilled]
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| TrainError::Record(format!("unknown role {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    /// Stopped on a non-finite loss.
    Aborted(String),
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Completed => f.write_str("completed"),
            Self::Aborted(why) => write!(f, "aborted: {why}"),
        }
    }
}

/// Provenance and outcome of one training run.
///
/// Equality ignores `wall_time_s`, so reruns with equal seeds compare equal.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run_id: String,
    pub config_digest: String,
    pub seed: u64,
    pub role: Role,
    /// e.g. `SCCNet-4`.
    pub architecture: String,
    pub montage: String,
    pub subject_id: String,
    pub teacher_run_id: Option<String>,
    /// Percent in `[0, 100]`; absent when no test set was given or the run aborted.
    pub test_accuracy: Option<f64>,
    pub best_val_loss: f64,
    /// 1-based epoch of `best_val_loss`; 0 if no epoch finished.
    pub best_epoch: usize,
    pub status: RunStatus,
    /// Hash of the selected parameters.
    pub param_hash: String,
    pub wall_time_s: f64,
    /// Free-form labels attached by experiment drivers (study cell, criterion, ...).
    pub tags: BTreeMap<String, String>,
}

impl PartialEq for RunRecord {
    fn eq(&self, o: &Self) -> bool {
        self.run_id == o.run_id
            && self.config_digest == o.config_digest
            && self.seed == o.seed
            && self.role == o.role
            && self.architecture == o.architecture
            && self.montage == o.montage
            && self.subject_id == o.subject_id
            && self.teacher_run_id == o.teacher_run_id
            && self.test_accuracy.map(f64::to_bits) == o.test_accuracy.map(f64::to_bits)
            && self.best_val_loss.to_bits() == o.best_val_loss.to_bits()
            && self.best_epoch == o.best_epoch
            && self.status == o.status
            && self.param_hash == o.param_hash
            && self.tags == o.tags
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

impl RunRecord {
    /// Plain `key = value` text; floats are written in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            ("run_id", self.run_id.clone()),
            ("config_digest", self.config_digest.clone()),
            ("seed", self.seed.to_string()),
            ("role", self.role.to_string()),
            ("architecture", self.architecture.clone()),
            ("montage", self.montage.clone()),
            ("subject_id", self.subject_id.clone()),
            ("teacher_run_id", self.teacher_run_id.clone().unwrap_or_else(|| "none".into())),
            ("test_accuracy", self.test_accuracy.map_or_else(|| "none".into(), |a| format!("{a:?}"))),
            ("best_val_loss", format!("{:?}", self.best_val_loss)),
            ("best_epoch", self.best_epoch.to_string()),
            (
                "status",
                match &self.status {
                    RunStatus::Completed => "completed".into(),
                    RunStatus::Aborted(why) => format!("aborted: {why}"),
                },
            ),
            ("param_hash", self.param_hash.clone()),
            ("wall_time_s", format!("{:?}", self.wall_time_s)),
        ]
        .into_iter()
        .map(|(k, v)| format!("{k} = {}", escape(&v)))
        .collect::<Vec<_>>();
        for (k, v) in &self.tags {
            lines.push(format!("tag.{k} = {}", escape(v)));
        }
        lines.join("\n") + "\n"
    }

    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut fields = BTreeMap::new();
        let mut tags = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| TrainError::Record(format!("malformed line {line:?}")))?;
            let v = unescape(v);
            match k.strip_prefix("tag.") {
                Some(tag) => tags.insert(tag.to_string(), v),
                None => fields.insert(k.to_string(), v),
            };
        }
        let get = |k: &str| fields.get(k).cloned().ok_or_else(|| TrainError::Record(format!("missing field `{k}`")));
        let bad = |k: &str, e: &dyn fmt::Display| TrainError::Record(format!("field `{k}`: {e}"));
        let opt = |v: String| (v != "none").then_some(v);
        let float = |k: &str| -> Result<f64, TrainError> { get(k)?.parse().map_err(|e| bad(k, &e)) };
        let status = get("status")?;
        Ok(Self {
            run_id: get("run_id")?,
            config_digest: get("config_digest")?,
            seed: get("seed")?.parse().map_err(|e| bad("seed", &e))?,
            role: get("role")?.parse()?,
            architecture: get("architecture")?,
            montage: get("montage")?,
            subject_id: get("subject_id")?,
            teacher_run_id: opt(get("teacher_run_id")?),
            test_accuracy: opt(get("test_accuracy")?)
                .map(|v| v.parse().map_err(|e| bad("test_accuracy", &e)))
                .transpose()?,
            best_val_loss: float("best_val_loss")?,
            best_epoch: get("best_epoch")?.parse().map_err(|e| bad("best_epoch", &e))?,
            status: match status.strip_prefix("aborted: ") {
                Some(why) => RunStatus::Aborted(why.to_string()),
                None if status == "completed" => RunStatus::Completed,
                None => return Err(bad("status", &status)),
            },
            param_hash: get("param_hash")?,
            wall_time_s: float("wall_time_s")?,
            tags,
        })
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

/// One row of the per-epoch training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_total: f64,
    /// Unweighted training terms by name (`ce`, `kd`, `sk`), batch-size weighted means.
    pub train_terms: BTreeMap<&'static str, f64>,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// CSV rendering of a training log with a fixed column set.
pub fn epoch_log_csv(rows: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_total,train_ce,train_kd,train_sk,val_loss,val_accuracy\n");
    for r in rows {
        let term = |k| r.train_terms.get(k).map_or_else(String::new, |v: &f64| format!("{v:?}"));
        s.push_str(&format!(
            "{},{:?},{},{},{},{:?},{:?}\n",
            r.epoch,
            r.train_total,
            term("ce"),
            term("kd"),
            term("sk"),
            r.val_loss,
            r.val_accuracy
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> RunRecord {
        RunRecord {
            run_id: "r1".into(),
            config_digest: "d".into(),
            seed: 3,
            role: Role::StudentDistilled,
            architecture: "SCCNet-4".into(),
            montage: "4p".into(),
            subject_id: "S01".into(),
            teacher_run_id: Some("t1".into()),
            test_accuracy: Some(55.3125),
            best_val_loss: 0.1 + 0.2,
            best_epoch: 17,
            status: RunStatus::Aborted("loss became NaN\nat epoch 3".into()),
            param_hash: "abc".into(),
            wall_time_s: 12.5,
            tags: [("criterion".to_string(), "cosine".to_string())].into_iter().collect(),
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let r = record();
        let back = RunRecord::parse(&r.to_text()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.best_val_loss.to_bits(), r.best_val_loss.to_bits());
        assert_eq!(back.wall_time_s, r.wall_time_s);
    }

    #[test]
    fn wall_time_is_ignored_by_equality() {
        let a = record();
        let b = RunRecord { wall_time_s: 99.0, ..record() };
        assert_eq!(a, b);
        assert_ne!(a, RunRecord { seed: 4, ..record() });
    }

    #[test]
    fn missing_field_is_named() {
        let text = record().to_text().replace("seed = 3\n", "");
        assert!(RunRecord::parse(&text).unwrap_err().to_string().contains("seed"));
    }
}
