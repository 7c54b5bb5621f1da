//! Image-level confidence for the input-dependent exit policy.
//!
//! A per-pixel confidence map is reduced to the fraction of pixels whose
//! confidence reaches `th_pix`. Optionally, pixels near semantic boundaries
//! first take the median confidence of their neighbourhood, since those
//! predictions are expected to be under-confident.

use serde::{Deserialize, Serialize};

use crate::tensorio::{LabelMap, PredictionTensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfidenceError {
    #[error("entropy confidence needs at least 2 classes, got {0}")]
    DegenerateClassCount(usize),
    #[error("dimension mismatch: map is {map:?}, mask is {mask:?}")]
    DimMismatch { map: (usize, usize), mask: (usize, usize) },
    #[error("output stride must be at least 1")]
    ZeroStride,
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
}

/// Per-pixel confidence function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Top1,
    /// `1 − H(p) / ln M`, so a one-hot pixel scores 1 and a uniform one 0.
    Entropy,
}

/// Morphological step applied to the raw boundary set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMorphology {
    /// Widen boundaries by a square of side `os`.
    #[default]
    Dilate,
    /// Literal erosion by a square of side `os`; thin boundaries vanish.
    Erode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ConfidenceMap {
    /// Values are clamped into `[0, 1]`.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Option<Self> {
        (values.len() == rows * cols).then(|| ConfidenceMap {
            rows,
            cols,
            values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMask {
    rows: usize,
    cols: usize,
    values: Vec<bool>,
}

impl EdgeMask {
    pub fn new(rows: usize, cols: usize, values: Vec<bool>) -> Option<Self> {
        (values.len() == rows * cols).then_some(EdgeMask { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|v| **v).count()
    }
}

/// Per-exit policy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ExitThresholds {
    pub th_pix: f64,
    pub th_img: f64,
    #[serde(default)]
    pub edge_enhancement: bool,
}

impl ExitThresholds {
    pub fn new(th_pix: f64, th_img: f64, edge_enhancement: bool) -> Result<Self, ConfidenceError> {
        for t in [th_pix, th_img] {
            if !(0.0..=1.0).contains(&t) {
                return Err(ConfidenceError::InvalidThreshold(t));
            }
        }
        Ok(ExitThresholds {
            th_pix,
            th_img,
            edge_enhancement,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitDecision {
    Exit,
    Continue,
}

pub fn pixel_confidence_map(
    pred: &PredictionTensor,
    estimator: Estimator,
) -> Result<ConfidenceMap, ConfidenceError> {
    let classes = pred.classes();
    let values = match estimator {
        Estimator::Top1 => (0..pred.pixel_count())
            .map(|p| pred.distribution(p).fold(0.0f32, f32::max) as f64)
            .collect(),
        Estimator::Entropy => {
            if classes < 2 {
                return Err(ConfidenceError::DegenerateClassCount(classes));
            }
            let ln_m = (classes as f64).ln();
            (0..pred.pixel_count())
                .map(|p| 1.0 - normalized_entropy(pred.distribution(p), ln_m))
                .collect()
        }
    };
    Ok(ConfidenceMap::new(pred.rows(), pred.cols(), values).expect("dims follow the tensor"))
}

/// `H(p) / ln M`, with `p` renormalised in f64 to absorb f32 export rounding.
fn normalized_entropy(dist: impl Iterator<Item = f32> + Clone, ln_m: f64) -> f64 {
    let sum: f64 = dist.clone().map(|v| v.max(0.0) as f64).sum();
    if sum <= 0.0 {
        return 1.0;
    }
    let h: f64 = dist
        .map(|v| v.max(0.0) as f64 / sum)
        .filter(|&q| q > 0.0)
        .map(|q| -q * q.ln())
        .sum();
    h / ln_m
}

/// Offsets `(lo, hi)` of a square structuring element of the given side.
fn square_extent(side: usize) -> (usize, usize) {
    ((side - 1) / 2, side / 2)
}

/// Label-discontinuity boundaries widened by a square of side `os`.
pub fn semantic_edge_mask(labels: &LabelMap, os: usize) -> Result<EdgeMask, ConfidenceError> {
    semantic_edge_mask_with(labels, os, EdgeMorphology::Dilate)
}

pub fn semantic_edge_mask_with(
    labels: &LabelMap,
    os: usize,
    morphology: EdgeMorphology,
) -> Result<EdgeMask, ConfidenceError> {
    if os == 0 {
        return Err(ConfidenceError::ZeroStride);
    }
    let (rows, cols) = (labels.rows(), labels.cols());
    let mut edges = vec![false; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let l = labels.get(r, c);
            edges[r * cols + c] = (r > 0 && labels.get(r - 1, c) != l)
                || (r + 1 < rows && labels.get(r + 1, c) != l)
                || (c > 0 && labels.get(r, c - 1) != l)
                || (c + 1 < cols && labels.get(r, c + 1) != l);
        }
    }
    let values = if os == 1 {
        edges
    } else {
        morph_square(&edges, rows, cols, os, morphology)
    };
    Ok(EdgeMask { rows, cols, values })
}

/// Binary dilation or erosion with a square element; windows are clipped at
/// the image border.
fn morph_square(
    input: &[bool],
    rows: usize,
    cols: usize,
    side: usize,
    morphology: EdgeMorphology,
) -> Vec<bool> {
    let (lo, hi) = square_extent(side);
    let combine = |acc: bool, v: bool| match morphology {
        EdgeMorphology::Dilate => acc || v,
        EdgeMorphology::Erode => acc && v,
    };
    let init = morphology == EdgeMorphology::Erode;
    // Separable: rows first, then columns.
    let mut horizontal = vec![init; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (c0, c1) = (c.saturating_sub(lo), (c + hi).min(cols - 1));
            horizontal[r * cols + c] = (c0..=c1).map(|k| input[r * cols + k]).fold(init, combine);
        }
    }
    let mut out = vec![init; rows * cols];
    for r in 0..rows {
        let (r0, r1) = (r.saturating_sub(lo), (r + hi).min(rows - 1));
        for c in 0..cols {
            out[r * cols + c] = (r0..=r1).map(|k| horizontal[k * cols + c]).fold(init, combine);
        }
    }
    out
}

/// Replaces masked pixels with the lower median of the `(4·os+1)²` window of
/// the original map, clipped at the border. Unmasked pixels are copied.
pub fn enhance_confidence_map(
    cmap: &ConfidenceMap,
    mask: &EdgeMask,
    os: usize,
) -> Result<ConfidenceMap, ConfidenceError> {
    if (cmap.rows, cmap.cols) != (mask.rows, mask.cols) {
        return Err(ConfidenceError::DimMismatch {
            map: (cmap.rows, cmap.cols),
            mask: (mask.rows, mask.cols),
        });
    }
    if os == 0 {
        return Err(ConfidenceError::ZeroStride);
    }
    let (rows, cols) = (cmap.rows, cmap.cols);
    let radius = 2 * os;
    let mut values = cmap.values.clone();
    let mut window = Vec::with_capacity((2 * radius + 1).pow(2));
    for r in 0..rows {
        for c in 0..cols {
            if !mask.values[r * cols + c] {
                continue;
            }
            window.clear();
            let (r0, r1) = (r.saturating_sub(radius), (r + radius).min(rows - 1));
            let (c0, c1) = (c.saturating_sub(radius), (c + radius).min(cols - 1));
            for rr in r0..=r1 {
                window.extend_from_slice(&cmap.values[rr * cols + c0..=rr * cols + c1]);
            }
            values[r * cols + c] = lower_median(&mut window);
        }
    }
    Ok(ConfidenceMap { rows, cols, values })
}

fn lower_median(values: &mut [f64]) -> f64 {
    let k = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(k, f64::total_cmp);
    *m
}

/// Fraction of pixels whose confidence is at least `th_pix`.
pub fn image_confidence(cmap: &ConfidenceMap, th_pix: f64) -> f64 {
    if cmap.values.is_empty() {
        return 0.0;
    }
    let hits = cmap.values.iter().filter(|&&v| v >= th_pix).count();
    hits as f64 / cmap.values.len() as f64
}

pub fn exit_decision(c_img: f64, th_img: f64, is_last_selected_exit: bool) -> ExitDecision {
    if is_last_selected_exit || c_img >= th_img {
        ExitDecision::Exit
    } else {
        ExitDecision::Continue
    }
}

/// Plain and edge-enhanced confidence maps for one exit prediction.
#[derive(Debug, Clone)]
pub struct ExitConfidence {
    pub plain: ConfidenceMap,
    pub enhanced: ConfidenceMap,
}

impl ExitConfidence {
    /// The edge mask is computed on the prediction's own argmax.
    pub fn compute(
        pred: &PredictionTensor,
        estimator: Estimator,
        os: usize,
        morphology: EdgeMorphology,
    ) -> Result<Self, ConfidenceError> {
        let plain = pixel_confidence_map(pred, estimator)?;
        let mask = semantic_edge_mask_with(&pred.argmax(), os, morphology)?;
        let enhanced = enhance_confidence_map(&plain, &mask, os)?;
        Ok(ExitConfidence { plain, enhanced })
    }

    pub fn image_confidence(&self, th_pix: f64, edge_enhancement: bool) -> f64 {
        let map = if edge_enhancement {
            &self.enhanced
        } else {
            &self.plain
        };
        image_confidence(map, th_pix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(classes: usize, rows: usize, cols: usize, data: Vec<f32>) -> PredictionTensor {
        PredictionTensor::new(classes, rows, cols, data).unwrap()
    }

    fn cmap(rows: usize, cols: usize, v: &[f64]) -> ConfidenceMap {
        ConfidenceMap::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn top1_and_entropy() {
        let t = pred(2, 1, 1, vec![0.7, 0.3]);
        let m = pixel_confidence_map(&t, Estimator::Top1).unwrap();
        assert!((m.values()[0] - 0.7).abs() < 1e-7);

        let uniform = pred(4, 1, 1, vec![0.25; 4]);
        let e = pixel_confidence_map(&uniform, Estimator::Entropy).unwrap();
        assert!(e.values()[0].abs() < 1e-12);

        // H = ln 2, so 1 − ln2/ln4 = 0.5.
        let half = pred(4, 1, 1, vec![0.5, 0.5, 0.0, 0.0]);
        let e = pixel_confidence_map(&half, Estimator::Entropy).unwrap();
        assert!((e.values()[0] - 0.5).abs() < 1e-12);

        let single = pred(1, 1, 1, vec![1.0]);
        assert_eq!(
            pixel_confidence_map(&single, Estimator::Entropy),
            Err(ConfidenceError::DegenerateClassCount(1))
        );
    }

    #[test]
    fn constant_labels_have_no_edges() {
        let l = LabelMap::filled(5, 7, 3);
        assert_eq!(semantic_edge_mask(&l, 2).unwrap().count(), 0);
        let one = LabelMap::filled(1, 1, 0);
        assert_eq!(semantic_edge_mask(&one, 1).unwrap().count(), 0);
    }

    /// Brute-force 4-neighbour discontinuity oracle.
    fn oracle_edges(l: &LabelMap) -> Vec<bool> {
        let (rows, cols) = (l.rows() as i64, l.cols() as i64);
        let mut out = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let here = l.get(r as usize, c as usize);
                let differs = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)].iter().any(|(dr, dc)| {
                    let (rr, cc) = (r + dr, c + dc);
                    rr >= 0
                        && rr < rows
                        && cc >= 0
                        && cc < cols
                        && l.get(rr as usize, cc as usize) != here
                });
                out.push(differs);
            }
        }
        out
    }

    #[test]
    fn half_split_marks_two_boundary_columns() {
        let data: Vec<u16> = (0..16).map(|i| if i % 4 < 2 { 0 } else { 1 }).collect();
        let l = LabelMap::new(4, 4, data).unwrap();
        let mask = semantic_edge_mask(&l, 1).unwrap();
        assert_eq!(mask.values(), oracle_edges(&l).as_slice());
        for r in 0..4 {
            assert_eq!(&mask.values()[r * 4..r * 4 + 4], &[false, true, true, false]);
        }
    }

    #[test]
    fn dilation_and_erosion_by_stride() {
        let data: Vec<u16> = (0..36).map(|i| if i % 6 < 3 { 0 } else { 1 }).collect();
        let l = LabelMap::new(6, 6, data).unwrap();
        // Boundary columns 2 and 3; side-3 square widens to columns 1..=4.
        let wide = semantic_edge_mask_with(&l, 3, EdgeMorphology::Dilate).unwrap();
        for r in 0..6 {
            assert_eq!(
                &wide.values()[r * 6..r * 6 + 6],
                &[false, true, true, true, true, false]
            );
        }
        // Erosion by 3 removes the two-pixel-wide band entirely.
        let thin = semantic_edge_mask_with(&l, 3, EdgeMorphology::Erode).unwrap();
        assert_eq!(thin.count(), 0);
        // Side 2 covers offsets 0..=1.
        let two = semantic_edge_mask_with(&l, 2, EdgeMorphology::Dilate).unwrap();
        assert_eq!(&two.values()[..6], &[false, true, true, true, false, false]);
        assert_eq!(semantic_edge_mask(&l, 0), Err(ConfidenceError::ZeroStride));
    }

    #[test]
    fn median_smoothing() {
        let m = cmap(1, 5, &[0.1, 0.2, 0.9, 0.2, 0.1]);
        let mask = EdgeMask::new(1, 5, vec![false, false, true, false, false]).unwrap();
        let out = enhance_confidence_map(&m, &mask, 1).unwrap();
        assert_eq!(out.values(), &[0.1, 0.2, 0.2, 0.2, 0.1]);

        let none = EdgeMask::new(1, 5, vec![false; 5]).unwrap();
        assert_eq!(enhance_confidence_map(&m, &none, 1).unwrap(), m);

        let ones = cmap(3, 3, &[1.0; 9]);
        let all = EdgeMask::new(3, 3, vec![true; 9]).unwrap();
        assert_eq!(enhance_confidence_map(&ones, &all, 2).unwrap(), ones);
    }

    #[test]
    fn median_uses_original_values_and_lower_median() {
        // Window at the left border clips to 3 values; at col 1, four.
        let m = cmap(1, 4, &[0.4, 0.1, 0.3, 0.2]);
        let mask = EdgeMask::new(1, 4, vec![true; 4]).unwrap();
        let out = enhance_confidence_map(&m, &mask, 1).unwrap();
        // col0: {0.4,0.1,0.3} → 0.3; col1: {0.4,0.1,0.3,0.2} → lower 0.2;
        // col2: same four → 0.2; col3: {0.1,0.3,0.2} → 0.2.
        assert_eq!(out.values(), &[0.3, 0.2, 0.2, 0.2]);
    }

    #[test]
    fn enhance_dim_mismatch() {
        let m = cmap(1, 2, &[0.5, 0.5]);
        let mask = EdgeMask::new(2, 1, vec![true, true]).unwrap();
        assert!(matches!(
            enhance_confidence_map(&m, &mask, 1),
            Err(ConfidenceError::DimMismatch { .. })
        ));
    }

    #[test]
    fn image_confidence_counts() {
        assert_eq!(image_confidence(&cmap(2, 2, &[1.0; 4]), 0.9), 1.0);
        assert_eq!(image_confidence(&cmap(2, 2, &[1.0, 0.8, 0.6, 0.4]), 0.7), 0.5);
        assert_eq!(image_confidence(&cmap(2, 2, &[0.0, 0.3, 0.6, 0.1]), 0.0), 1.0);
    }

    #[test]
    fn exit_rule() {
        assert_eq!(exit_decision(0.8, 0.7, false), ExitDecision::Exit);
        assert_eq!(exit_decision(0.6, 0.7, false), ExitDecision::Continue);
        assert_eq!(exit_decision(0.0, 1.0, true), ExitDecision::Exit);
        assert_eq!(exit_decision(0.7, 0.7, false), ExitDecision::Exit);
    }

    #[test]
    fn thresholds_validated() {
        assert!(ExitThresholds::new(0.9, 0.5, true).is_ok());
        assert_eq!(
            ExitThresholds::new(1.2, 0.5, false),
            Err(ConfidenceError::InvalidThreshold(1.2))
        );
    }
}
