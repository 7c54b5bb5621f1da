//! Confusion matrices and the accuracy figures derived from them.

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::tensorio::{LabelMap, IGNORE_LABEL};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("label maps differ in size: {pred:?} vs {gt:?}")]
    DimMismatch { pred: (usize, usize), gt: (usize, usize) },
    #[error("class {label} at pixel {pixel} outside {classes} classes")]
    OutOfRangeClass { pixel: usize, label: u16, classes: usize },
    #[error("confusion matrix has no usable counts")]
    EmptyMatrix,
    #[error("matrices have different class counts ({0} vs {1})")]
    ClassCountMismatch(usize, usize),
}

/// `M × M` counts; rows are ground truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

/// Options for the mean-IoU reduction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MiouOptions {
    /// Leave this class out of the mean.
    pub exclude_class: Option<usize>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Option<Self> {
        (counts.len() == classes * classes).then_some(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub(crate) fn counts_mut(&mut self) -> &mut [u64] {
        &mut self.counts
    }

    #[inline]
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    #[inline]
    pub fn add_pixel(&mut self, gt: usize, pred: usize) {
        self.counts[gt * self.classes + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if other.classes != self.classes {
            return Err(MetricsError::ClassCountMismatch(self.classes, other.classes));
        }
        *self += other;
        Ok(())
    }

    /// IoU per class; `None` where the class is neither present nor predicted.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        let m = self.classes;
        (0..m)
            .map(|k| {
                let tp = self.get(k, k);
                let row: u64 = (0..m).map(|p| self.get(k, p)).sum();
                let col: u64 = (0..m).map(|g| self.get(g, k)).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    /// Panics if the class counts differ; use [`ConfusionMatrix::merge`] for
    /// a checked variant.
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        assert_eq!(self.classes, rhs.classes, "class count mismatch");
        for (a, b) in self.counts.iter_mut().zip(&rhs.counts) {
            *a += b;
        }
    }
}

pub fn confusion_matrix(
    pred: &LabelMap,
    gt: &LabelMap,
    classes: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if (pred.rows(), pred.cols()) != (gt.rows(), gt.cols()) {
        return Err(MetricsError::DimMismatch {
            pred: (pred.rows(), pred.cols()),
            gt: (gt.rows(), gt.cols()),
        });
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (pixel, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        if g == IGNORE_LABEL {
            continue;
        }
        for label in [g, p] {
            if label as usize >= classes {
                return Err(MetricsError::OutOfRangeClass {
                    pixel,
                    label,
                    classes,
                });
            }
        }
        cm.add_pixel(g as usize, p as usize);
    }
    Ok(cm)
}

/// Mean IoU over classes with a non-empty union.
pub fn miou(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    miou_with(cm, MiouOptions::default())
}

pub fn miou_with(cm: &ConfusionMatrix, options: MiouOptions) -> Result<f64, MetricsError> {
    let ious: Vec<f64> = cm
        .class_iou()
        .into_iter()
        .enumerate()
        .filter(|(k, _)| Some(*k) != options.exclude_class)
        .filter_map(|(_, iou)| iou)
        .collect();
    if ious.is_empty() {
        return Err(MetricsError::EmptyMatrix);
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Pixel accuracy with the background class's true positives removed from
/// both numerator and denominator.
pub fn pixel_accuracy(cm: &ConfusionMatrix, background_class: usize) -> Result<f64, MetricsError> {
    let bg_tp = if background_class < cm.classes {
        cm.get(background_class, background_class)
    } else {
        0
    };
    let denom = cm.total() - bg_tp;
    if denom == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    Ok((cm.trace() - bg_tp) as f64 / denom as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(rows: usize, cols: usize, v: &[u16]) -> LabelMap {
        LabelMap::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_is_diagonal() {
        let gt = labels(2, 3, &[0, 1, 2, 2, 1, 0]);
        let cm = confusion_matrix(&gt, &gt, 3).unwrap();
        assert_eq!(cm.trace(), 6);
        assert_eq!(cm.total(), 6);
        assert_eq!(miou(&cm).unwrap(), 1.0);
    }

    #[test]
    fn off_diagonal_count() {
        let gt = labels(2, 1, &[0, 1]);
        let pred = labels(2, 1, &[0, 0]);
        let cm = confusion_matrix(&pred, &gt, 2).unwrap();
        assert_eq!(cm.counts(), &[1, 0, 1, 0]);
        // class 0: 1/(1+1) = 0.5, class 1: 0 → 0.25.
        assert_eq!(miou(&cm).unwrap(), 0.25);
    }

    #[test]
    fn ignore_and_errors() {
        let gt = LabelMap::filled(2, 2, IGNORE_LABEL);
        let pred = LabelMap::filled(2, 2, 0);
        let cm = confusion_matrix(&pred, &gt, 2).unwrap();
        assert_eq!(cm.total(), 0);
        assert_eq!(miou(&cm), Err(MetricsError::EmptyMatrix));

        let bad = labels(1, 1, &[5]);
        assert!(matches!(
            confusion_matrix(&bad, &labels(1, 1, &[0]), 2),
            Err(MetricsError::OutOfRangeClass { label: 5, .. })
        ));
        assert!(matches!(
            confusion_matrix(&pred, &labels(1, 4, &[0; 4]), 2),
            Err(MetricsError::DimMismatch { .. })
        ));
    }

    #[test]
    fn absent_class_excluded() {
        let gt = labels(1, 3, &[0, 0, 0]);
        let cm = confusion_matrix(&gt, &gt, 2).unwrap();
        assert_eq!(miou(&cm).unwrap(), 1.0);
        assert_eq!(cm.class_iou(), vec![Some(1.0), None]);
    }

    #[test]
    fn exclude_background_option() {
        let gt = labels(1, 4, &[0, 0, 1, 1]);
        let pred = labels(1, 4, &[0, 1, 1, 1]);
        let cm = confusion_matrix(&pred, &gt, 2).unwrap();
        let all = miou(&cm).unwrap();
        let fg = miou_with(&cm, MiouOptions { exclude_class: Some(0) }).unwrap();
        assert!((all - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((fg - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn pixel_accuracy_excludes_background_hits() {
        // 2 background TPs, 1 foreground TP, 1 foreground error.
        let gt = labels(1, 4, &[0, 0, 1, 2]);
        let pred = labels(1, 4, &[0, 0, 1, 1]);
        let cm = confusion_matrix(&pred, &gt, 3).unwrap();
        assert_eq!(pixel_accuracy(&cm, 0).unwrap(), 0.5);

        let fg = labels(1, 2, &[1, 2]);
        let cm = confusion_matrix(&fg, &fg, 3).unwrap();
        assert_eq!(pixel_accuracy(&cm, 0).unwrap(), 1.0);

        let bg = LabelMap::filled(2, 2, 0);
        let cm = confusion_matrix(&bg, &bg, 3).unwrap();
        assert_eq!(pixel_accuracy(&cm, 0), Err(MetricsError::EmptyMatrix));
    }

    proptest! {
        #[test]
        fn matrices_are_additive(
            a in proptest::collection::vec(0u16..4, 12),
            b in proptest::collection::vec(0u16..4, 12),
            c in proptest::collection::vec(0u16..4, 12),
            d in proptest::collection::vec(0u16..4, 12),
        ) {
            let (pa, ga) = (labels(3, 4, &a), labels(3, 4, &b));
            let (pb, gb) = (labels(3, 4, &c), labels(3, 4, &d));
            let mut merged = confusion_matrix(&pa, &ga, 4).unwrap();
            merged.merge(&confusion_matrix(&pb, &gb, 4).unwrap()).unwrap();
            let joined_p = labels(6, 4, &[a.clone(), c.clone()].concat());
            let joined_g = labels(6, 4, &[b.clone(), d.clone()].concat());
            prop_assert_eq!(merged, confusion_matrix(&joined_p, &joined_g, 4).unwrap());
        }

        #[test]
        fn miou_bounded(
            p in proptest::collection::vec(0u16..3, 16),
            g in proptest::collection::vec(0u16..3, 16),
        ) {
            let cm = confusion_matrix(&labels(4, 4, &p), &labels(4, 4, &g), 3).unwrap();
            let v = miou(&cm).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v == 1.0, p == g);
        }
    }
}
