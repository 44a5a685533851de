//! Inter-sample similarity matrices and the distillation objectives built on them.

mod loss;
mod similarity;

pub use loss::{cross_entropy, hkd_loss, sk_loss, softened_kl, total_loss, LossBreakdown, LossTerm};
pub use similarity::{
    hilbert_matrix, instantaneous_phase, plv_similarity, similarity_matrix, zero_center, EPS,
};

use std::fmt;
use std::str::FromStr;

use burn::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::TapName;
use crate::tensor::to_vec_f64;

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("teacher batch has {teacher} samples but student batch has {student}")]
    BatchMismatch { teacher: usize, student: usize },
    #[error("a teacher is required by the active loss terms")]
    MissingTeacher,
    #[error("invalid distillation config: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}

pub type Result<T> = std::result::Result<T, DistillError>;

/// Pairwise similarity measure between two channel maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Cosine,
    Dot,
    /// Negated Euclidean distance.
    L2,
    /// Phase locking value.
    Plv,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [Self::Cosine, Self::Dot, Self::L2, Self::Plv];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cosine => "cosine",
            Self::Dot => "dot",
            Self::L2 => "l2",
            Self::Plv => "plv",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = DistillError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| DistillError::Config(format!("unknown criterion {s:?}")))
    }
}

/// Which mean [`zero_center`] subtracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CenteringScope {
    /// One mean per channel over batch and spatial axes.
    #[default]
    Batch,
    /// One mean per sample and channel.
    Sample,
}

/// Teacher tap distilled into a student tap, written `LF2:LF2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LayerPair {
    pub teacher: TapName,
    pub student: TapName,
}

impl LayerPair {
    pub fn same(tap: TapName) -> Self {
        Self { teacher: tap, student: tap }
    }
}

impl fmt::Display for LayerPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.teacher, self.student)
    }
}

impl FromStr for LayerPair {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.split_once(':') {
            Some((t, st)) => Ok(Self { teacher: t.parse()?, student: st.parse()? }),
            None => Ok(Self::same(s.parse()?)),
        }
    }
}

impl TryFrom<String> for LayerPair {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<LayerPair> for String {
    fn from(p: LayerPair) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub layer_pairs: Vec<LayerPair>,
    /// Weight of the similarity-keeping term.
    pub beta: f64,
    /// Weight of the softened-logits term (only with `use_logits_loss`).
    pub alpha: f64,
    pub temperature: f64,
    pub criterion: Criterion,
    pub centered: bool,
    pub centering_scope: CenteringScope,
    pub use_logits_loss: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            layer_pairs: vec![LayerPair::same(TapName::Lf2), LayerPair::same(TapName::Lf3)],
            beta: 450.0,
            alpha: 0.9,
            temperature: 4.0,
            criterion: Criterion::Cosine,
            centered: true,
            centering_scope: CenteringScope::Batch,
            use_logits_loss: false,
        }
    }
}

impl DistillConfig {
    /// Config whose objective is plain cross-entropy.
    pub fn cross_entropy_only() -> Self {
        Self { beta: 0.0, alpha: 0.0, use_logits_loss: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DistillError::Config(m));
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad(format!("beta must be a finite value ≥ 0, got {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.beta > 0.0 && self.layer_pairs.is_empty() {
            return bad("layer_pairs must be nonempty when beta > 0".into());
        }
        Ok(())
    }

    /// Whether any loss term consults the teacher.
    pub fn needs_teacher(&self) -> bool {
        (self.beta != 0.0 && !self.layer_pairs.is_empty()) || (self.use_logits_loss && self.alpha != 0.0)
    }
}

/// A materialized similarity matrix with the settings that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub n: usize,
    /// Row-major `n × n`.
    pub values: Vec<f64>,
    pub criterion: Criterion,
    pub centered: bool,
    pub tap: Option<TapName>,
}

impl SimilarityMatrix {
    pub fn compute<B: Backend>(
        f: Tensor<B, 4>,
        criterion: Criterion,
        centered: bool,
        scope: CenteringScope,
        tap: Option<TapName>,
    ) -> Self {
        let n = f.dims()[0];
        let values = to_vec_f64(similarity_matrix(f, criterion, centered, scope));
        Self { n, values, criterion, centered, tap }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}
