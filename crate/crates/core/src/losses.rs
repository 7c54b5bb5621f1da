//! Forward-only evaluation of the multi-exit training losses: the
//! exit-dropout pre-training loss and positive-filtering distillation.
//!
//! Nothing here computes gradients. The evaluators exist to check exported
//! predictions and external training pipelines against known values.

use serde::{Deserialize, Serialize};

use crate::confidence::EdgeMask;
use crate::tensorio::{LabelMap, PredictionTensor, IGNORE_LABEL};

/// Lower clamp for probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("no pixel selected for the cross-entropy term")]
    EmptySelection,
    #[error("label {label} outside {classes} classes")]
    OutOfRangeClass { label: u16, classes: usize },
    #[error("need at least {needed} exits, got {got}")]
    TooFewExits { needed: usize, got: usize },
    #[error("batch index must be at least 1")]
    InvalidBatchIndex,
    #[error("alpha {0} outside [0, 1]")]
    InvalidAlpha(f64),
}

/// Argument order of the distillation KL term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirection {
    /// `KL(final ‖ exit)`: the final exit is the reference distribution.
    #[default]
    TeacherStudent,
    /// `KL(exit ‖ final)`.
    StudentTeacher,
}

/// Which early exits receive a cross-entropy term for batch `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitSchedule {
    /// Every early exit `i` with `j mod i = 0`.
    #[default]
    Divisors,
    /// Exactly one early exit, cycling `1, 2, …, N−1`.
    RoundRobin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitTerm {
    /// 1-based exit index.
    pub exit_id: usize,
    pub ce_term: f64,
    pub kl_term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub per_exit_terms: Vec<ExitTerm>,
    pub active_exit_set: Vec<usize>,
}

impl LossReport {
    fn from_terms(per_exit_terms: Vec<ExitTerm>) -> Self {
        let total = per_exit_terms.iter().map(|t| t.ce_term + t.kl_term).sum();
        let active_exit_set = per_exit_terms.iter().map(|t| t.exit_id).collect();
        LossReport {
            total,
            per_exit_terms,
            active_exit_set,
        }
    }

    /// Element-wise mean of several reports with identical exit structure.
    pub fn mean(reports: &[LossReport]) -> Option<LossReport> {
        let first = reports.first()?;
        let n = reports.len() as f64;
        let terms = first
            .per_exit_terms
            .iter()
            .enumerate()
            .map(|(k, t)| ExitTerm {
                exit_id: t.exit_id,
                ce_term: reports.iter().map(|r| r.per_exit_terms[k].ce_term).sum::<f64>() / n,
                kl_term: reports.iter().map(|r| r.per_exit_terms[k].kl_term).sum::<f64>() / n,
            })
            .collect();
        Some(LossReport::from_terms(terms))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfdOptions {
    pub alpha: f64,
    /// Keep the `i = N` term; it reduces to `α·CE` on the final exit's
    /// correct pixels because its KL term is zero.
    pub include_final: bool,
    pub direction: KlDirection,
}

impl Default for PfdOptions {
    fn default() -> Self {
        PfdOptions {
            alpha: DEFAULT_ALPHA,
            include_final: true,
            direction: KlDirection::TeacherStudent,
        }
    }
}

fn check_dims(pred: &PredictionTensor, gt: &LabelMap) -> Result<(), LossError> {
    if (pred.rows(), pred.cols()) != (gt.rows(), gt.cols()) {
        return Err(LossError::DimMismatch(format!(
            "prediction {}x{}, labels {}x{}",
            pred.rows(),
            pred.cols(),
            gt.rows(),
            gt.cols()
        )));
    }
    Ok(())
}

/// Mean `−ln p[gt]` over selected pixels; `None` if nothing is selected.
fn masked_cross_entropy(
    pred: &PredictionTensor,
    gt: &LabelMap,
    select: impl Fn(usize) -> bool,
) -> Result<Option<f64>, LossError> {
    check_dims(pred, gt)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, &g) in gt.data().iter().enumerate() {
        if g == IGNORE_LABEL || !select(p) {
            continue;
        }
        if g as usize >= pred.classes() {
            return Err(LossError::OutOfRangeClass {
                label: g,
                classes: pred.classes(),
            });
        }
        let prob = (pred.prob(g as usize, p) as f64).clamp(PROB_FLOOR, 1.0);
        sum += -prob.ln();
        count += 1;
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// Mean cross-entropy over non-ignored pixels, optionally restricted to
/// pixels where `mask` is set.
pub fn cross_entropy(
    pred: &PredictionTensor,
    gt: &LabelMap,
    mask: Option<&EdgeMask>,
) -> Result<f64, LossError> {
    if let Some(m) = mask {
        if (m.rows(), m.cols()) != (gt.rows(), gt.cols()) {
            return Err(LossError::DimMismatch("mask and labels differ".into()));
        }
    }
    masked_cross_entropy(pred, gt, |p| mask.is_none_or(|m| m.values()[p]))?
        .ok_or(LossError::EmptySelection)
}

/// Mean per-pixel `KL(teacher ‖ student)`.
pub fn kl_divergence(student: &PredictionTensor, teacher: &PredictionTensor) -> Result<f64, LossError> {
    kl_divergence_with(student, teacher, KlDirection::TeacherStudent)
}

pub fn kl_divergence_with(
    student: &PredictionTensor,
    teacher: &PredictionTensor,
    direction: KlDirection,
) -> Result<f64, LossError> {
    if (student.classes(), student.rows(), student.cols())
        != (teacher.classes(), teacher.rows(), teacher.cols())
    {
        return Err(LossError::DimMismatch(format!(
            "student {}x{}x{}, teacher {}x{}x{}",
            student.classes(),
            student.rows(),
            student.cols(),
            teacher.classes(),
            teacher.rows(),
            teacher.cols()
        )));
    }
    let (reference, other) = match direction {
        KlDirection::TeacherStudent => (teacher, student),
        KlDirection::StudentTeacher => (student, teacher),
    };
    let pixels = reference.pixel_count();
    if pixels == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..pixels)
        .map(|p| pixel_kl(reference, other, p))
        .sum();
    Ok(total / pixels as f64)
}

/// `Σ_k p_k ln(p_k / q_k)` with both sides renormalised in f64.
fn pixel_kl(p: &PredictionTensor, q: &PredictionTensor, pixel: usize) -> f64 {
    let sp: f64 = p.distribution(pixel).map(|v| v.max(0.0) as f64).sum();
    let sq: f64 = q.distribution(pixel).map(|v| v.max(0.0) as f64).sum();
    p.distribution(pixel)
        .zip(q.distribution(pixel))
        .map(|(a, b)| {
            let a = a.max(0.0) as f64 / sp;
            if a <= 0.0 {
                return 0.0;
            }
            let b = (b.max(0.0) as f64 / sq).clamp(PROB_FLOOR, 1.0);
            a * (a / b).ln()
        })
        .sum()
}

/// Exits whose cross-entropy is active for batch `batch_index` (1-based).
pub fn active_exits(num_exits: usize, batch_index: u64, schedule: ExitSchedule) -> Vec<usize> {
    let early = num_exits.saturating_sub(1);
    let mut set: Vec<usize> = match schedule {
        ExitSchedule::Divisors => (1..=early)
            .filter(|&i| batch_index.is_multiple_of(i as u64))
            .collect(),
        ExitSchedule::RoundRobin if early > 0 => {
            vec![((batch_index - 1) % early as u64) as usize + 1]
        }
        ExitSchedule::RoundRobin => Vec::new(),
    };
    set.push(num_exits);
    set
}

/// Exit-dropout pre-training loss for one batch.
pub fn pretrain_loss(
    preds: &[PredictionTensor],
    gt: &LabelMap,
    batch_index: u64,
    schedule: ExitSchedule,
) -> Result<LossReport, LossError> {
    if preds.len() < 2 {
        return Err(LossError::TooFewExits {
            needed: 2,
            got: preds.len(),
        });
    }
    if batch_index == 0 {
        return Err(LossError::InvalidBatchIndex);
    }
    let terms = active_exits(preds.len(), batch_index, schedule)
        .into_iter()
        .map(|i| {
            Ok(ExitTerm {
                exit_id: i,
                ce_term: cross_entropy(&preds[i - 1], gt, None)?,
                kl_term: 0.0,
            })
        })
        .collect::<Result<Vec<_>, LossError>>()?;
    Ok(LossReport::from_terms(terms))
}

/// Positive-filtering distillation loss: cross-entropy only on pixels the
/// final exit gets right, plus KL towards the final exit everywhere.
pub fn pfd_loss(
    preds: &[PredictionTensor],
    gt: &LabelMap,
    options: PfdOptions,
) -> Result<LossReport, LossError> {
    let n = preds.len();
    if n < 1 {
        return Err(LossError::TooFewExits { needed: 1, got: 0 });
    }
    if !(0.0..=1.0).contains(&options.alpha) {
        return Err(LossError::InvalidAlpha(options.alpha));
    }
    let last = &preds[n - 1];
    check_dims(last, gt)?;
    let final_labels = last.argmax();
    let correct: Vec<bool> = final_labels
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| *g != IGNORE_LABEL && p == g)
        .collect();
    let upto = if options.include_final { n } else { n - 1 };
    let alpha = options.alpha;
    let terms = (1..=upto)
        .map(|i| {
            let y = &preds[i - 1];
            let ce = masked_cross_entropy(y, gt, |p| correct[p])?.unwrap_or(0.0);
            let kl = kl_divergence_with(y, last, options.direction)?;
            Ok(ExitTerm {
                exit_id: i,
                ce_term: alpha * ce,
                kl_term: (1.0 - alpha) * kl,
            })
        })
        .collect::<Result<Vec<_>, LossError>>()?;
    Ok(LossReport::from_terms(terms))
}
