use burn::prelude::*;
use burn::tensor::activation::log_softmax;

use super::{similarity_matrix, DistillConfig, DistillError, Result};
use crate::models::TapSet;
use crate::tensor::scalar;

/// Similarity-keeping loss: sum over layer pairs of the mean squared
/// difference between teacher and student similarity matrices. Teacher
/// activations are detached.
pub fn sk_loss<B: Backend>(teacher: &TapSet<B>, student: &TapSet<B>, cfg: &DistillConfig) -> Result<Tensor<B, 1>> {
    let (nt, ns) = (teacher.batch_size(), student.batch_size());
    if nt != ns {
        return Err(DistillError::BatchMismatch { teacher: nt, student: ns });
    }
    let device = student.logits.device();
    let mut total = Tensor::<B, 1>::zeros([1], &device);
    for pair in &cfg.layer_pairs {
        let m_t = similarity_matrix(teacher.get(pair.teacher).clone().detach(), cfg.criterion, cfg.centered, cfg.centering_scope);
        let m_s = similarity_matrix(student.get(pair.student).clone(), cfg.criterion, cfg.centered, cfg.centering_scope);
        total = total + (m_s - m_t).powi_scalar(2).mean();
    }
    Ok(total)
}

/// Batch-mean cross-entropy of `logits` against integer labels.
pub fn cross_entropy<B: Backend>(logits: Tensor<B, 2>, y: Tensor<B, 1, Int>) -> Tensor<B, 1> {
    let n = y.dims()[0];
    log_softmax(logits, 1).gather(1, y.reshape([n, 1])).mean().neg()
}

/// Batch-mean `KL(softmax(z_t / T) ‖ softmax(z_s / T))`; the teacher side is detached.
pub fn softened_kl<B: Backend>(z_teacher: Tensor<B, 2>, z_student: Tensor<B, 2>, temperature: f64) -> Tensor<B, 1> {
    let n = z_student.dims()[0] as f64;
    let log_pt = log_softmax(z_teacher.detach() / temperature, 1);
    let log_ps = log_softmax(z_student / temperature, 1);
    (log_pt.clone().exp() * (log_pt - log_ps)).sum() / n
}

/// Logits-distillation loss `(1−α)·CE + α·T²·KL`.
pub fn hkd_loss<B: Backend>(
    z_teacher: Tensor<B, 2>,
    z_student: Tensor<B, 2>,
    y: Tensor<B, 1, Int>,
    alpha: f64,
    temperature: f64,
) -> Tensor<B, 1> {
    let ce = cross_entropy(z_student.clone(), y);
    let kl = softened_kl(z_teacher, z_student, temperature);
    ce * (1.0 - alpha) + kl * (alpha * temperature * temperature)
}

/// One weighted term of the training objective.
#[derive(Debug, Clone)]
pub struct LossTerm<B: Backend> {
    pub name: &'static str,
    pub weight: f64,
    /// Unweighted value.
    pub value: Tensor<B, 1>,
}

/// The objective and the terms it was summed from.
#[derive(Debug, Clone)]
pub struct LossBreakdown<B: Backend> {
    pub total: Tensor<B, 1>,
    /// Terms with non-zero weight, in summation order (`ce`, `kd`, `sk`).
    pub terms: Vec<LossTerm<B>>,
}

impl<B: Backend> LossBreakdown<B> {
    /// `(name, weight, unweighted value)` per term.
    pub fn values(&self) -> Vec<(&'static str, f64, f64)> {
        self.terms.iter().map(|t| (t.name, t.weight, scalar(t.value.clone()))).collect()
    }

    pub fn total_value(&self) -> f64 {
        scalar(self.total.clone())
    }
}

/// Full student objective.
///
/// Without the logits loss this is `CE + β·SK`; with it,
/// `(1−α)·CE + α·T²·KL + β·SK`. Terms with zero weight are not evaluated, so
/// `β = 0` (and `α = 0`) reproduces plain cross-entropy training exactly. The
/// teacher taps are needed only when a teacher term is active.
pub fn total_loss<B: Backend>(
    student: &TapSet<B>,
    teacher: Option<&TapSet<B>>,
    y: Tensor<B, 1, Int>,
    cfg: &DistillConfig,
) -> Result<LossBreakdown<B>> {
    let (ce_w, kd_w) = if cfg.use_logits_loss {
        (1.0 - cfg.alpha, cfg.alpha * cfg.temperature * cfg.temperature)
    } else {
        (1.0, 0.0)
    };
    let mut terms = Vec::new();
    if ce_w != 0.0 {
        terms.push(LossTerm { name: "ce", weight: ce_w, value: cross_entropy(student.logits.clone(), y) });
    }
    let needs_teacher = kd_w != 0.0 || (cfg.beta != 0.0 && !cfg.layer_pairs.is_empty());
    if needs_teacher {
        let teacher = teacher.ok_or(DistillError::MissingTeacher)?;
        if kd_w != 0.0 {
            let (nt, ns) = (teacher.batch_size(), student.batch_size());
            if nt != ns {
                return Err(DistillError::BatchMismatch { teacher: nt, student: ns });
            }
            let kl = softened_kl(teacher.logits.clone(), student.logits.clone(), cfg.temperature);
            terms.push(LossTerm { name: "kd", weight: kd_w, value: kl });
        }
        if cfg.beta != 0.0 && !cfg.layer_pairs.is_empty() {
            terms.push(LossTerm { name: "sk", weight: cfg.beta, value: sk_loss(teacher, student, cfg)? });
        }
    }
    let mut total: Option<Tensor<B, 1>> = None;
    for t in &terms {
        let weighted = if t.weight == 1.0 { t.value.clone() } else { t.value.clone() * t.weight };
        total = Some(match total {
            None => weighted,
            Some(acc) => acc + weighted,
        });
    }
    let total = total.ok_or_else(|| DistillError::Config("objective has no active term".into()))?;
    Ok(LossBreakdown { total, terms })
}
