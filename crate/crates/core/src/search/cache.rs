//! Per-image, per-exit results computed once from the calibration split.
//!
//! For every image and every (exit point, arch) pair the cache keeps the
//! confusion matrix of the exit's argmax against the labels and the image
//! confidence `c_img` at each `th_pix` on the grid, with and without edge
//! enhancement. Any configuration can then be evaluated from lookups alone.

use std::fs;
use std::path::Path;

use bincode::Options;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SearchError;
use crate::arch::ExitArch;
use crate::confidence::{EdgeMorphology, Estimator, ExitConfidence};
use crate::metrics::{confusion_matrix, ConfusionMatrix};
use crate::tensorio::{PredictionSource, TensorIoError};

pub const CACHE_SCHEMA: &str = "mess.cache/v1";

const CACHE_MAGIC: &[u8; 8] = b"MESSCCH1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSettings {
    /// Ascending pixel-confidence thresholds to tabulate.
    pub th_pix_grid: Vec<f64>,
    pub estimator: Estimator,
    pub morphology: EdgeMorphology,
}

impl Default for CacheSettings {
    fn default() -> Self {
        CacheSettings {
            th_pix_grid: super::default_th_pix_grid(),
            estimator: Estimator::Top1,
            morphology: EdgeMorphology::Dilate,
        }
    }
}

/// Everything cached for one (exit point, arch) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Slot {
    pub point: usize,
    pub arch: ExitArch,
    /// Image-major `M × M` confusion counts.
    pub cms: Vec<u64>,
    /// Image-major `[plain | enhanced]` rows of `c_img` over the grid.
    pub conf: Vec<f64>,
    pub total: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCache {
    schema: String,
    pub(crate) class_count: usize,
    pub(crate) background_class: u16,
    pub(crate) image_ids: Vec<String>,
    pub(crate) exit_blocks: Vec<usize>,
    pub(crate) output_strides: Vec<u32>,
    pub(crate) archs: Vec<Vec<ExitArch>>,
    pub(crate) settings: CacheSettings,
    /// First slot of each exit point; slots of a point follow `archs` order.
    pub(crate) slot_offsets: Vec<usize>,
    pub(crate) slots: Vec<Slot>,
}

struct ImageResult {
    cms: Vec<Vec<u64>>,
    conf: Vec<Vec<f64>>,
}

pub fn build_calibration_cache(
    source: &dyn PredictionSource,
    settings: &CacheSettings,
) -> Result<CalibrationCache, SearchError> {
    let grid = &settings.th_pix_grid;
    if grid.is_empty()
        || grid.iter().any(|t| !(0.0..=1.0).contains(t))
        || grid.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(SearchError::InvalidLimits(
            "th_pix grid must be strictly ascending within [0, 1]".into(),
        ));
    }
    let classes = source.class_count();
    let exit_blocks = source.exit_blocks();
    if exit_blocks.is_empty() {
        return Err(SearchError::EmptySpace);
    }
    let archs: Vec<Vec<ExitArch>> = exit_blocks.iter().map(|&b| source.archs_at(b)).collect();
    let output_strides = exit_blocks
        .iter()
        .map(|&b| source.output_stride(b).ok_or(SearchError::MissingExitPoint(b)))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<(usize, ExitArch)> = archs
        .iter()
        .enumerate()
        .flat_map(|(p, list)| list.iter().map(move |&a| (p, a)))
        .collect();

    let per_image: Vec<ImageResult> = (0..source.image_count())
        .into_par_iter()
        .map(|image| -> Result<ImageResult, SearchError> {
            let labels = source.labels(image)?;
            let mut out = ImageResult {
                cms: Vec::with_capacity(pairs.len()),
                conf: Vec::with_capacity(pairs.len()),
            };
            for &(point, arch) in &pairs {
                let pred = source.prediction(image, exit_blocks[point], arch)?;
                if (pred.rows(), pred.cols()) != (labels.rows(), labels.cols()) {
                    return Err(TensorIoError::DimMismatch(format!(
                        "prediction {}x{} vs labels {}x{} for image {}",
                        pred.rows(),
                        pred.cols(),
                        labels.rows(),
                        labels.cols(),
                        source.image_id(image)
                    ))
                    .into());
                }
                let cm = confusion_matrix(&pred.argmax(), &labels, classes)?;
                let ec = ExitConfidence::compute(
                    &pred,
                    settings.estimator,
                    output_strides[point] as usize,
                    settings.morphology,
                )?;
                let mut row = Vec::with_capacity(2 * grid.len());
                for edge in [false, true] {
                    row.extend(grid.iter().map(|&t| ec.image_confidence(t, edge)));
                }
                out.cms.push(cm.counts().to_vec());
                out.conf.push(row);
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;

    let mut slots: Vec<Slot> = pairs
        .iter()
        .map(|&(point, arch)| Slot {
            point,
            arch,
            cms: Vec::with_capacity(per_image.len() * classes * classes),
            conf: Vec::with_capacity(per_image.len() * 2 * grid.len()),
            total: ConfusionMatrix::zeros(classes),
        })
        .collect();
    for img in per_image {
        for ((slot, cm), conf) in slots.iter_mut().zip(img.cms).zip(img.conf) {
            for (t, c) in slot.total_counts_mut().iter_mut().zip(&cm) {
                *t += c;
            }
            slot.cms.extend(cm);
            slot.conf.extend(conf);
        }
    }
    let mut slot_offsets = Vec::with_capacity(archs.len());
    let mut acc = 0;
    for list in &archs {
        slot_offsets.push(acc);
        acc += list.len();
    }
    Ok(CalibrationCache {
        schema: CACHE_SCHEMA.to_string(),
        class_count: classes,
        background_class: source.background_class(),
        image_ids: (0..source.image_count()).map(|i| source.image_id(i)).collect(),
        exit_blocks,
        output_strides,
        archs,
        settings: settings.clone(),
        slot_offsets,
        slots,
    })
}

impl Slot {
    fn total_counts_mut(&mut self) -> &mut [u64] {
        self.total.counts_mut()
    }

    pub fn cm(&self, image: usize, m2: usize) -> &[u64] {
        &self.cms[image * m2..(image + 1) * m2]
    }
}

impl CalibrationCache {
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn background_class(&self) -> u16 {
        self.background_class
    }

    pub fn image_count(&self) -> usize {
        self.image_ids.len()
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn exit_blocks(&self) -> &[usize] {
        &self.exit_blocks
    }

    pub fn output_strides(&self) -> &[u32] {
        &self.output_strides
    }

    /// Archs cached at each exit point, in point order.
    pub fn archs(&self) -> &[Vec<ExitArch>] {
        &self.archs
    }

    pub fn settings(&self) -> &CacheSettings {
        &self.settings
    }

    pub fn th_pix_grid(&self) -> &[f64] {
        &self.settings.th_pix_grid
    }

    /// Position of `th_pix` on the grid, matched to within 1e-12.
    pub fn th_pix_index(&self, th_pix: f64) -> Option<usize> {
        self.settings
            .th_pix_grid
            .iter()
            .position(|&t| (t - th_pix).abs() <= 1e-12)
    }

    pub(crate) fn point_of_block(&self, block: usize) -> Option<usize> {
        self.exit_blocks.iter().position(|&b| b == block)
    }

    pub(crate) fn arch_pos(&self, point: usize, arch: ExitArch) -> Option<usize> {
        self.archs[point].iter().position(|&a| a == arch)
    }

    pub(crate) fn slot_index(&self, point: usize, arch_pos: usize) -> usize {
        self.slot_offsets[point] + arch_pos
    }

    pub(crate) fn slot(&self, index: usize) -> &Slot {
        &self.slots[index]
    }

    /// Cached `c_img` for an image at one grid position.
    pub(crate) fn c_img(&self, slot: usize, image: usize, pix_index: usize, edge: bool) -> f64 {
        let g = self.settings.th_pix_grid.len();
        self.slots[slot].conf[image * 2 * g + usize::from(edge) * g + pix_index]
    }

    /// Dataset confusion matrix of one arch at one exit point.
    pub fn dataset_confusion(&self, block: usize, arch: ExitArch) -> Option<&ConfusionMatrix> {
        let point = self.point_of_block(block)?;
        let pos = self.arch_pos(point, arch)?;
        Some(&self.slots[self.slot_index(point, pos)].total)
    }

    pub fn save(&self, path: &Path) -> Result<(), SearchError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(TensorIoError::from)?;
        }
        let mut bytes = CACHE_MAGIC.to_vec();
        bincode::DefaultOptions::new()
            .serialize_into(&mut bytes, self)
            .map_err(|e| SearchError::CacheFormat(e.to_string()))?;
        fs::write(path, bytes).map_err(TensorIoError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SearchError> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => TensorIoError::MissingFile(path.to_path_buf()),
            _ => TensorIoError::Io(e),
        })?;
        let body = bytes
            .strip_prefix(CACHE_MAGIC.as_slice())
            .ok_or_else(|| SearchError::CacheFormat("not a calibration cache".into()))?;
        // The limit stops corrupt length prefixes from allocating more than
        // the file could hold.
        let cache: CalibrationCache = bincode::DefaultOptions::new()
            .with_limit(bytes.len() as u64)
            .deserialize(body)
            .map_err(|e| SearchError::CacheFormat(e.to_string()))?;
        if cache.schema != CACHE_SCHEMA {
            return Err(SearchError::CacheFormat(format!(
                "schema {:?}, expected {CACHE_SCHEMA:?}",
                cache.schema
            )));
        }
        Ok(cache)
    }
}
