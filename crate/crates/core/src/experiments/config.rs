//! Declarative experiment configuration: one TOML file plus dotted overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Montage, PreprocessConfig};
use crate::distill::{Criterion, DistillConfig, LayerPair};
use crate::models::Architecture;
use crate::training::TrainConfig;

use super::{ExperimentError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    LayerSweep,
    MontageCompare,
    CrossSubject,
    Elimination,
    Ablation,
}

impl Study {
    pub const ALL: [Study; 5] = [Self::LayerSweep, Self::MontageCompare, Self::CrossSubject, Self::Elimination, Self::Ablation];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::LayerSweep => "layer_sweep",
            Self::MontageCompare => "montage_compare",
            Self::CrossSubject => "cross_subject",
            Self::Elimination => "elimination",
            Self::Ablation => "ablation",
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Study {
    type Err = ExperimentError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| ExperimentError::Config(format!("unknown study {s:?}")))
    }
}

/// Teacher and student architectures of one distillation pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchPair {
    pub teacher: Architecture,
    pub student: Architecture,
}

impl ArchPair {
    pub fn same(a: Architecture) -> Self {
        Self { teacher: a, student: a }
    }
}

/// Rows of the method comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "sk")]
    Sk,
    #[serde(rename = "hkd")]
    Hkd,
    #[serde(rename = "sk+logits")]
    SkLogits,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Sk => "sk",
            Self::Hkd => "hkd",
            Self::SkLogits => "sk+logits",
        }
    }

    /// Distillation settings of this row, derived from the SK settings `sk`.
    pub fn distill(self, sk: &DistillConfig) -> Option<DistillConfig> {
        match self {
            Self::Baseline => None,
            Self::Sk => Some(DistillConfig { use_logits_loss: false, ..sk.clone() }),
            Self::Hkd => Some(DistillConfig { beta: 0.0, use_logits_loss: true, ..sk.clone() }),
            Self::SkLogits => Some(DistillConfig { use_logits_loss: true, ..sk.clone() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSourceKind {
    /// Prepared containers under `data.root`.
    #[default]
    Containers,
    /// Generated on the fly; for smoke runs without the dataset.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticData {
    pub n_trials: usize,
    pub n_classes: usize,
    pub n_samples: usize,
    pub fs: f64,
    pub signal_gain: f64,
}

impl Default for SyntheticData {
    fn default() -> Self {
        Self { n_trials: 48, n_classes: 4, n_samples: 128, fs: 128.0, signal_gain: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSourceKind,
    /// Directory of prepared containers.
    pub root: PathBuf,
    /// Directory of vendor recordings read by `prepare`.
    pub raw_dir: PathBuf,
    /// File name of a recording; `{num}` is the subject number, `{session}` is `T` or `E`.
    pub raw_pattern: String,
    /// File of true class labels for sessions whose cues are unlabeled; same placeholders.
    pub labels_pattern: String,
    pub train_session: String,
    pub test_session: String,
    pub synthetic: SyntheticData,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSourceKind::Containers,
            root: PathBuf::from("data"),
            raw_dir: PathBuf::from("data/raw"),
            raw_pattern: "A{num}{session}.gdf".into(),
            labels_pattern: "A{num}{session}.labels".into(),
            train_session: "T".into(),
            test_session: "E".into(),
            synthetic: SyntheticData::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerSweepConfig {
    /// Tap combinations written `LF2+LF3`; each tap is distilled into the same student tap.
    pub combos: Vec<String>,
}

impl Default for LayerSweepConfig {
    fn default() -> Self {
        Self { combos: ["LF1", "LF2", "LF3", "LF1+LF2", "LF2+LF3", "LF1+LF2+LF3"].map(String::from).to_vec() }
    }
}

/// Parses `LF1+LF3` or `LF1:LF2+LF3` into layer pairs.
pub fn parse_combo(s: &str) -> Result<Vec<LayerPair>> {
    s.split('+')
        .map(|p| p.trim().parse::<LayerPair>().map_err(|e| ExperimentError::Config(format!("layer combination {s:?}: {e}"))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub methods: Vec<Method>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { methods: vec![Method::Baseline, Method::Sk, Method::Hkd, Method::SkLogits] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossSubjectConfig {
    /// Adds a subject-independent teacher row trained on all other subjects.
    pub include_si: bool,
    /// Cells whose rank-sum p-value is not below this are masked.
    pub significance: f64,
}

impl Default for CrossSubjectConfig {
    fn default() -> Self {
        Self { include_si: true, significance: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EliminationMode {
    /// Train a fresh student for every candidate channel set.
    #[default]
    Retrain,
    /// Train once on the full set and zero the removed channels at evaluation.
    Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KdMode {
    None,
    Sk,
}

impl KdMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Sk => "sk",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EliminationConfig {
    pub mode: EliminationMode,
    /// Pipelines the elimination is run for.
    pub kd: Vec<KdMode>,
    /// Montage the elimination starts from.
    pub montage: String,
    pub seeds: Vec<u64>,
}

impl Default for EliminationConfig {
    fn default() -> Self {
        Self { mode: EliminationMode::Retrain, kd: vec![KdMode::None, KdMode::Sk], montage: "22".into(), seeds: vec![0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub criteria: Vec<Criterion>,
    pub centered: Vec<bool>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { criteria: vec![Criterion::L2, Criterion::Plv, Criterion::Dot, Criterion::Cosine], centered: vec![true, false] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub study: Study,
    pub subjects: Vec<String>,
    pub seeds: Vec<u64>,
    /// Seed of every teacher run.
    pub teacher_seed: u64,
    pub pairs: Vec<ArchPair>,
    /// Student montages: builtin names or keys of `montage_files`.
    pub montages: Vec<String>,
    /// Extra montages, name to file of channel names.
    pub montage_files: BTreeMap<String, PathBuf>,
    /// Parallel runs.
    pub jobs: usize,
    pub results_dir: PathBuf,
    /// Also keep the parameters of student runs (teachers are always kept).
    pub save_student_checkpoints: bool,
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    /// Optimizer and schedule settings shared by every run; the architecture,
    /// montage, seed and distillation settings are set per run.
    pub train: TrainConfig,
    /// Similarity-keeping settings the study cells start from.
    pub distill: DistillConfig,
    pub layer_sweep: LayerSweepConfig,
    pub compare: CompareConfig,
    pub cross_subject: CrossSubjectConfig,
    pub elimination: EliminationConfig,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            study: Study::MontageCompare,
            subjects: (1..=9).map(|i| format!("S{i:02}")).collect(),
            seeds: (0..10).collect(),
            teacher_seed: 0,
            pairs: vec![
                ArchPair::same(Architecture::SccNet),
                ArchPair::same(Architecture::EegNet),
                ArchPair::same(Architecture::ShallowConvNet),
            ],
            montages: vec!["4p".into(), "4b".into()],
            montage_files: BTreeMap::new(),
            jobs: 1,
            results_dir: PathBuf::from("results"),
            save_student_checkpoints: false,
            data: DataConfig::default(),
            preprocess: PreprocessConfig::default(),
            train: TrainConfig::default(),
            distill: DistillConfig::default(),
            layer_sweep: LayerSweepConfig::default(),
            compare: CompareConfig::default(),
            cross_subject: CrossSubjectConfig::default(),
            elimination: EliminationConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.subjects.is_empty() {
            return bad("subjects must not be empty".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.pairs.is_empty() {
            return bad("pairs must not be empty".into());
        }
        if self.montages.is_empty() {
            return bad("montages must not be empty".into());
        }
        if self.jobs < 1 {
            return bad("jobs must be at least 1".into());
        }
        for (i, s) in self.subjects.iter().enumerate() {
            if self.subjects[..i].contains(s) {
                return bad(format!("subject {s} listed twice"));
            }
            if s.is_empty() || s.contains(['/', '\\', '\t']) || s.starts_with("SI") {
                return bad(format!("invalid subject id {s:?}"));
            }
        }
        if self.train.distill.is_some() {
            return bad("train.distill is set per run; use the [distill] section".into());
        }
        self.train.validate().map_err(|e| ExperimentError::Config(format!("train: {e}")))?;
        self.distill.validate().map_err(|e| ExperimentError::Config(format!("distill: {e}")))?;
        for m in self.montages.iter().chain([&self.elimination.montage]) {
            self.montage(m)?;
        }
        for c in &self.layer_sweep.combos {
            parse_combo(c)?;
        }
        if !(self.cross_subject.significance > 0.0 && self.cross_subject.significance < 1.0) {
            return bad(format!("cross_subject.significance must lie in (0, 1), got {}", self.cross_subject.significance));
        }
        if self.elimination.seeds.is_empty() || self.elimination.kd.is_empty() {
            return bad("elimination.seeds and elimination.kd must not be empty".into());
        }
        if self.ablation.criteria.is_empty() || self.ablation.centered.is_empty() {
            return bad("ablation.criteria and ablation.centered must not be empty".into());
        }
        if self.compare.methods.is_empty() {
            return bad("compare.methods must not be empty".into());
        }
        if self.data.source == DataSourceKind::Synthetic {
            let s = &self.data.synthetic;
            if s.n_trials == 0 || s.n_classes < 2 || s.n_samples == 0 || !(s.fs > 0.0) {
                return bad("data.synthetic needs trials, at least 2 classes, samples and a positive fs".into());
            }
        }
        Ok(())
    }

    /// The high-density layout every student montage is a subset of.
    pub fn parent_montage(&self) -> Montage {
        Montage::bcic_22()
    }

    /// Resolves a montage name to its channel list.
    pub fn montage(&self, name: &str) -> Result<Montage> {
        let parent = self.parent_montage();
        if name == parent.name() {
            return Ok(parent);
        }
        if let Some(path) = self.montage_files.get(name) {
            return Ok(Montage::load(path, &parent)?);
        }
        Montage::builtin(name).ok_or_else(|| ExperimentError::Config(format!("montage {name:?} is not defined")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn lookup_path<'a>(table: &'a mut toml::Table, path: &[&str]) -> Option<&'a mut toml::Value> {
    let (last, parents) = path.split_last()?;
    let mut t = table;
    for p in parents {
        t = t.get_mut(*p)?.as_table_mut()?;
    }
    t.get_mut(*last)
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses the value of a `KEY=VALUE` override as a TOML literal, falling back to a plain string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Builds a config from `defaults`, the optional file text and `KEY=VALUE` overrides.
///
/// Every override must name a key that exists after the file is merged over
/// the defaults; unknown keys and type errors are reported by name.
pub fn load_config(defaults: &ExperimentConfig, file_text: Option<&str>, overrides: &[String]) -> Result<ExperimentConfig> {
    // via text: `Table::try_from` rejects the integer keys of `preprocess.class_map`
    let mut table: toml::Table = toml::from_str(&defaults.to_toml()).expect("serialized config parses");
    if let Some(text) = file_text {
        let file: toml::Table = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        merge(&mut table, file);
    }
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| ExperimentError::Config(format!("override {o:?} is not KEY=VALUE")))?;
        let key = key.trim();
        let path: Vec<&str> = key.split('.').collect();
        let slot = lookup_path(&mut table, &path).ok_or_else(|| ExperimentError::UnknownKey(key.to_string()))?;
        *slot = override_value(raw.trim());
    }
    let text = toml::to_string(&table).map_err(|e| ExperimentError::Config(e.to_string()))?;
    let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| {
        let field = e.span().and_then(|span| field_at(&text, span.start));
        ExperimentError::Config(match field {
            Some(f) => format!("{f}: {}", e.message()),
            None => e.message().to_string(),
        })
    })?;
    Ok(cfg)
}

/// Dotted key of the `key = value` line containing byte `offset` of `text`.
fn field_at(text: &str, offset: usize) -> Option<String> {
    let start = text[..offset.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next()?;
    let key = line.split_once('=')?.0.trim().trim_matches('"');
    let section = text[..start]
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix('[').and_then(|l| l.strip_suffix(']')))
        .map(|s| s.trim_matches(['[', ']']).to_string());
    Some(match section {
        Some(s) => format!("{s}.{key}"),
        None => key.to_string(),
    })
}

/// Taps of one layer-sweep cell, by name.
pub fn combo_label(pairs: &[LayerPair]) -> String {
    pairs
        .iter()
        .map(|p| if p.teacher == p.student { p.teacher.to_string() } else { p.to_string() })
        .collect::<Vec<_>>()
        .join("+")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let d = ExperimentConfig::default();
        d.validate().unwrap();
        assert_eq!(load_config(&d, Some(&d.to_toml()), &[]).unwrap(), d);
        assert_eq!(load_config(&d, None, &[]).unwrap(), d);
    }

    #[test]
    fn overrides_address_existing_keys() {
        let d = ExperimentConfig::default();
        let c = load_config(&d, None, &["distill.beta=450".into(), "train.epochs=3".into(), "seeds=[1,2]".into()]).unwrap();
        assert_eq!((c.distill.beta, c.train.epochs, c.seeds.clone()), (450.0, 3, vec![1, 2]));
        let c = load_config(&d, None, &["study=ablation".into(), "distill.criterion=plv".into()]).unwrap();
        assert_eq!((c.study, c.distill.criterion), (Study::Ablation, Criterion::Plv));
        match load_config(&d, None, &["nonexistent.key=1".into()]) {
            Err(ExperimentError::UnknownKey(k)) => assert_eq!(k, "nonexistent.key"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_keys_are_checked() {
        let d = ExperimentConfig::default();
        let err = load_config(&d, Some("[train]\nepochz = 3\n"), &[]).unwrap_err();
        assert!(err.to_string().contains("epochz"), "{err}");
        let err = load_config(&d, None, &["train.epochs=many".into()]).unwrap_err();
        assert!(err.to_string().contains("train.epochs"), "{err}");
        let err = load_config(&d, None, &["distill.criterion=manhattan".into()]).unwrap_err();
        assert!(err.to_string().contains("distill.criterion"), "{err}");
    }

    #[test]
    fn montages_resolve() {
        let d = ExperimentConfig::default();
        assert_eq!(d.montage("4p").unwrap().len(), 4);
        assert_eq!(d.montage("22").unwrap().len(), 22);
        assert!(d.montage("7x").is_err());
    }

    #[test]
    fn combos_parse() {
        let p = parse_combo("LF2+LF3").unwrap();
        assert_eq!(combo_label(&p), "LF2+LF3");
        assert!(parse_combo("LF2+LF9").is_err());
    }

    #[test]
    fn method_rows() {
        let sk = DistillConfig::default();
        assert!(Method::Baseline.distill(&sk).is_none());
        let hkd = Method::Hkd.distill(&sk).unwrap();
        assert_eq!((hkd.beta, hkd.use_logits_loss), (0.0, true));
        assert!(Method::SkLogits.distill(&sk).unwrap().use_logits_loss);
    }
}
