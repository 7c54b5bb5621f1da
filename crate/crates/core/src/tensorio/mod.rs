//! Reading and writing prediction tensors, label maps, dataset manifests and
//! cost profiles.

mod costs;
mod manifest;
mod source;
mod tensor;

use std::path::PathBuf;

pub use costs::{load_cost_profile, BlockCost, CostKind, CostProfile, ExitOverhead};
pub use manifest::{
    load_manifest, save_manifest, ArchPrediction, DatasetManifest, ExitEntry, ImageEntry,
};
pub use source::{MemoryImage, MemorySource, PredictionSource};
pub use tensor::{
    read_f32_grid, read_label_map, read_raw, read_tensor, write_f32_grid, write_label_map,
    write_raw, write_tensor, DType, LabelMap, PredictionTensor, RawTensor, FORMAT_VERSION,
    IGNORE_LABEL, MAGIC, PROBABILITY_SLACK, SOFTMAX_SUM_TOLERANCE,
};

use crate::arch::ExitArch;

#[derive(Debug, thiserror::Error)]
pub enum TensorIoError {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("missing MESS magic header")]
    BadMagic,
    #[error("unsupported tensor format version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported dtype code {0}")]
    UnsupportedDType(u8),
    #[error("dtype code {found} where {expected} was expected")]
    WrongDType { expected: u8, found: u8 },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("non-finite value at element {index}")]
    NonFiniteValue { index: usize },
    #[error("probability {value} at element {index} outside [0, 1]")]
    ProbabilityOutOfRange { index: usize, value: f32 },
    #[error("class distribution at pixel {pixel} sums to {sum}")]
    BadDistribution { pixel: usize, sum: f64 },
    #[error("label {label} at pixel {pixel} is not a class id below {classes}")]
    LabelOutOfRange { pixel: usize, label: u16, classes: usize },
    #[error("parse error in {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("manifest references missing files: {}", display_paths(.0))]
    MissingReferencedFile(Vec<PathBuf>),
    #[error("inconsistent exit set: {0}")]
    InconsistentExitSet(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("non-positive cost {value} for {what}")]
    NonPositiveCost { what: String, value: f64 },
    #[error("cost profile has no blocks")]
    EmptyProfile,
    #[error("block range {from}:{to} outside a profile of {blocks} blocks")]
    BlockRange { from: usize, to: usize, blocks: usize },
    #[error("no head cost for {arch} at block {block}")]
    MissingHeadCost { block: usize, arch: ExitArch },
    #[error("cost profile has no latency for {0}")]
    MissingLatency(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn display_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}
