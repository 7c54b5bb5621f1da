//! Access to per-image labels and per-exit predictions, whether they live on
//! disk behind a manifest or in memory.

use super::{DatasetManifest, LabelMap, PredictionTensor, TensorIoError};
use crate::arch::ExitArch;

pub trait PredictionSource: Sync {
    fn class_count(&self) -> usize;
    fn background_class(&self) -> u16;
    fn image_count(&self) -> usize;
    fn image_id(&self, image: usize) -> String;
    /// Exit blocks in depth order.
    fn exit_blocks(&self) -> Vec<usize>;
    fn archs_at(&self, block: usize) -> Vec<ExitArch>;
    fn output_stride(&self, block: usize) -> Option<u32>;
    fn labels(&self, image: usize) -> Result<LabelMap, TensorIoError>;
    fn prediction(
        &self,
        image: usize,
        block: usize,
        arch: ExitArch,
    ) -> Result<PredictionTensor, TensorIoError>;
}

impl PredictionSource for DatasetManifest {
    fn class_count(&self) -> usize {
        self.class_count
    }

    fn background_class(&self) -> u16 {
        self.background_class
    }

    fn image_count(&self) -> usize {
        self.images.len()
    }

    fn image_id(&self, image: usize) -> String {
        self.images[image].image_id.clone()
    }

    fn exit_blocks(&self) -> Vec<usize> {
        DatasetManifest::exit_blocks(self)
    }

    fn archs_at(&self, block: usize) -> Vec<ExitArch> {
        DatasetManifest::archs_at(self, block)
    }

    fn output_stride(&self, block: usize) -> Option<u32> {
        DatasetManifest::output_stride(self, block)
    }

    fn labels(&self, image: usize) -> Result<LabelMap, TensorIoError> {
        self.load_labels(image)
    }

    fn prediction(
        &self,
        image: usize,
        block: usize,
        arch: ExitArch,
    ) -> Result<PredictionTensor, TensorIoError> {
        self.load_prediction(image, block, arch)
    }
}

/// Everything held in memory, for tests and generated data.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorySource {
    pub class_count: usize,
    pub background_class: u16,
    /// `(block, output stride)` per exit point, shallow first.
    pub exits: Vec<(usize, u32)>,
    pub images: Vec<MemoryImage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryImage {
    pub image_id: String,
    pub labels: LabelMap,
    /// `(block, arch, prediction)` triples.
    pub predictions: Vec<(usize, ExitArch, PredictionTensor)>,
}

impl PredictionSource for MemorySource {
    fn class_count(&self) -> usize {
        self.class_count
    }

    fn background_class(&self) -> u16 {
        self.background_class
    }

    fn image_count(&self) -> usize {
        self.images.len()
    }

    fn image_id(&self, image: usize) -> String {
        self.images[image].image_id.clone()
    }

    fn exit_blocks(&self) -> Vec<usize> {
        self.exits.iter().map(|e| e.0).collect()
    }

    fn archs_at(&self, block: usize) -> Vec<ExitArch> {
        let mut archs: Vec<ExitArch> = self
            .images
            .first()
            .map(|img| {
                img.predictions
                    .iter()
                    .filter(|p| p.0 == block)
                    .map(|p| p.1)
                    .collect()
            })
            .unwrap_or_default();
        archs.sort_by_key(|a| a.index());
        archs.dedup();
        archs
    }

    fn output_stride(&self, block: usize) -> Option<u32> {
        self.exits.iter().find(|e| e.0 == block).map(|e| e.1)
    }

    fn labels(&self, image: usize) -> Result<LabelMap, TensorIoError> {
        Ok(self.images[image].labels.clone())
    }

    fn prediction(
        &self,
        image: usize,
        block: usize,
        arch: ExitArch,
    ) -> Result<PredictionTensor, TensorIoError> {
        self.images[image]
            .predictions
            .iter()
            .find(|p| p.0 == block && p.1 == arch)
            .map(|p| p.2.clone())
            .ok_or_else(|| {
                TensorIoError::InconsistentExitSet(format!(
                    "image {} has no {arch} prediction at block {block}",
                    self.images[image].image_id
                ))
            })
    }
}
