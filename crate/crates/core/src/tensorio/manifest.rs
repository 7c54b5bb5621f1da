//! `manifest.json`: which label map and which per-exit predictions belong to
//! each image.
//!
//! ```json
//! {
//!   "schema": "mess.manifest/v1",
//!   "class_count": 5,
//!   "background_class": 0,
//!   "images": [{
//!     "image_id": "calib-0000",
//!     "label_path": "labels/calib-0000.mt",
//!     "exits": [{
//!       "block": 4,
//!       "output_stride": 8,
//!       "predictions": [{ "arch": "c3b0r0h0", "path": "preds/calib-0000_b4_c3b0r0h0.mt" }]
//!     }]
//!   }]
//! }
//! ```
//!
//! Relative paths resolve against the directory holding the manifest.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_label_map, read_tensor, LabelMap, PredictionTensor, TensorIoError};
use crate::arch::ExitArch;

pub const MANIFEST_SCHEMA: &str = "mess.manifest/v1";

fn manifest_schema() -> String {
    MANIFEST_SCHEMA.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchPrediction {
    pub arch: ExitArch,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitEntry {
    /// Backbone block ordinal the exit attaches to.
    pub block: usize,
    pub output_stride: u32,
    pub predictions: Vec<ArchPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: String,
    pub label_path: PathBuf,
    pub exits: Vec<ExitEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default = "manifest_schema")]
    pub schema: String,
    pub class_count: usize,
    pub background_class: u16,
    pub images: Vec<ImageEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
}

type ExitSignature = Vec<(usize, u32, Vec<ExitArch>)>;

impl DatasetManifest {
    pub fn new(class_count: usize, background_class: u16, images: Vec<ImageEntry>) -> Self {
        DatasetManifest {
            schema: manifest_schema(),
            class_count,
            background_class,
            images,
            base_dir: PathBuf::new(),
        }
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    fn signature(image: &ImageEntry) -> ExitSignature {
        image
            .exits
            .iter()
            .map(|e| {
                let mut archs: Vec<_> = e.predictions.iter().map(|p| p.arch).collect();
                archs.sort();
                (e.block, e.output_stride, archs)
            })
            .collect()
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<(), TensorIoError> {
        let invalid = |m: String| Err(TensorIoError::InvalidManifest(m));
        if self.class_count == 0 {
            return invalid("class_count must be positive".into());
        }
        if self.background_class as usize >= self.class_count {
            return invalid(format!(
                "background_class {} outside {} classes",
                self.background_class, self.class_count
            ));
        }
        let Some(first) = self.images.first() else {
            return invalid("manifest lists no images".into());
        };
        for image in &self.images {
            let mut prev = 0usize;
            for e in &image.exits {
                if e.block == 0 || e.block <= prev {
                    return invalid(format!(
                        "image {}: exit blocks must be positive and strictly increasing",
                        image.image_id
                    ));
                }
                prev = e.block;
                if e.output_stride == 0 {
                    return invalid(format!(
                        "image {}: output stride at block {} must be positive",
                        image.image_id, e.block
                    ));
                }
                let unique: BTreeSet<_> = e.predictions.iter().map(|p| p.arch).collect();
                if unique.len() != e.predictions.len() || unique.is_empty() {
                    return invalid(format!(
                        "image {}: block {} needs a non-empty list of distinct archs",
                        image.image_id, e.block
                    ));
                }
            }
        }
        let reference = Self::signature(first);
        if reference.is_empty() {
            return invalid(format!("image {} lists no exits", first.image_id));
        }
        for image in &self.images[1..] {
            let sig = Self::signature(image);
            if sig != reference {
                return Err(TensorIoError::InconsistentExitSet(format!(
                    "image {} lists exits {:?}, image {} lists {:?}",
                    image.image_id,
                    describe(&sig),
                    first.image_id,
                    describe(&reference)
                )));
            }
        }
        Ok(())
    }

    /// Every referenced path that does not exist on disk.
    pub fn missing_files(&self) -> Vec<PathBuf> {
        let mut missing = Vec::new();
        for image in &self.images {
            let label = self.resolve(&image.label_path);
            if !label.is_file() {
                missing.push(label);
            }
            for p in image.exits.iter().flat_map(|e| &e.predictions) {
                let path = self.resolve(&p.path);
                if !path.is_file() {
                    missing.push(path);
                }
            }
        }
        missing
    }

    /// Exit blocks shared by all images, in depth order.
    pub fn exit_blocks(&self) -> Vec<usize> {
        self.images
            .first()
            .map(|i| i.exits.iter().map(|e| e.block).collect())
            .unwrap_or_default()
    }

    fn exit_entry(&self, block: usize) -> Option<&ExitEntry> {
        self.images.first()?.exits.iter().find(|e| e.block == block)
    }

    /// Architectures available at `block`, in index order.
    pub fn archs_at(&self, block: usize) -> Vec<ExitArch> {
        let mut archs: Vec<_> = self
            .exit_entry(block)
            .map(|e| e.predictions.iter().map(|p| p.arch).collect())
            .unwrap_or_default();
        archs.sort();
        archs
    }

    pub fn output_stride(&self, block: usize) -> Option<u32> {
        self.exit_entry(block).map(|e| e.output_stride)
    }

    pub fn prediction_path(&self, image: usize, block: usize, arch: ExitArch) -> Option<PathBuf> {
        self.images
            .get(image)?
            .exits
            .iter()
            .find(|e| e.block == block)?
            .predictions
            .iter()
            .find(|p| p.arch == arch)
            .map(|p| self.resolve(&p.path))
    }

    pub fn load_labels(&self, image: usize) -> Result<LabelMap, TensorIoError> {
        let entry = self.images.get(image).ok_or_else(|| {
            TensorIoError::InvalidManifest(format!("no image at position {image}"))
        })?;
        let labels = read_label_map(&self.resolve(&entry.label_path))?;
        labels.check_classes(self.class_count)?;
        Ok(labels)
    }

    pub fn load_prediction(
        &self,
        image: usize,
        block: usize,
        arch: ExitArch,
    ) -> Result<PredictionTensor, TensorIoError> {
        let path = self.prediction_path(image, block, arch).ok_or_else(|| {
            TensorIoError::InvalidManifest(format!(
                "image {image} has no prediction for {arch} at block {block}"
            ))
        })?;
        let t = read_tensor(&path)?;
        if t.classes() != self.class_count {
            return Err(TensorIoError::DimMismatch(format!(
                "{} has {} classes, manifest declares {}",
                path.display(),
                t.classes(),
                self.class_count
            )));
        }
        Ok(t.with_exit_id(block as u32))
    }
}

fn describe(sig: &ExitSignature) -> Vec<String> {
    sig.iter()
        .map(|(b, os, archs)| {
            let archs: Vec<_> = archs.iter().map(|a| a.to_string()).collect();
            format!("block {b} (os {os}): {}", archs.join("/"))
        })
        .collect()
}

/// Parses and checks a manifest, including that every referenced file exists.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, TensorIoError> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => TensorIoError::MissingFile(path.to_path_buf()),
        _ => TensorIoError::Io(e),
    })?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| TensorIoError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = manifest.with_base_dir(base);
    manifest.validate()?;
    let missing = manifest.missing_files();
    if !missing.is_empty() {
        return Err(TensorIoError::MissingReferencedFile(missing));
    }
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), TensorIoError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let text = serde_json::to_string_pretty(manifest).map_err(|e| TensorIoError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::{write_label_map, write_tensor};

    fn arch(code: &str) -> ExitArch {
        code.parse().unwrap()
    }

    /// 2 images × 3 exits, one arch each, all files written.
    fn fixture(dir: &Path) -> DatasetManifest {
        let t = PredictionTensor::new(2, 1, 2, vec![0.9, 0.2, 0.1, 0.8]).unwrap();
        let l = LabelMap::new(1, 2, vec![0, 1]).unwrap();
        let mut images = Vec::new();
        for i in 0..2 {
            let label_path = PathBuf::from(format!("labels/{i}.mt"));
            write_label_map(&l, &dir.join(&label_path)).unwrap();
            let exits = [2usize, 4, 6]
                .iter()
                .map(|&b| {
                    let path = PathBuf::from(format!("preds/{i}_{b}.mt"));
                    write_tensor(&t, &dir.join(&path)).unwrap();
                    ExitEntry {
                        block: b,
                        output_stride: 8,
                        predictions: vec![ArchPrediction {
                            arch: arch("c0b0r0h0"),
                            path,
                        }],
                    }
                })
                .collect();
            images.push(ImageEntry {
                image_id: format!("img{i}"),
                label_path,
                exits,
            });
        }
        DatasetManifest::new(2, 0, images)
    }

    #[test]
    fn loads_complete_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path());
        let path = dir.path().join("manifest.json");
        save_manifest(&m, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back.image_count(), 2);
        assert_eq!(back.exit_blocks(), vec![2, 4, 6]);
        assert_eq!(back.archs_at(4), vec![arch("c0b0r0h0")]);
        assert_eq!(back.output_stride(6), Some(8));
        let t = back.load_prediction(1, 4, arch("c0b0r0h0")).unwrap();
        assert_eq!(t.exit_id, 4);
        assert_eq!(back.load_labels(0).unwrap().data(), &[0, 1]);
    }

    #[test]
    fn names_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path());
        fs::remove_file(dir.path().join("preds/1_4.mt")).unwrap();
        let path = dir.path().join("manifest.json");
        save_manifest(&m, &path).unwrap();
        match load_manifest(&path) {
            Err(TensorIoError::MissingReferencedFile(paths)) => {
                assert_eq!(paths, vec![dir.path().join("preds/1_4.mt")]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inconsistent_exit_set() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = fixture(dir.path());
        m.images[1].exits.pop();
        let path = dir.path().join("manifest.json");
        save_manifest(&m, &path).unwrap();
        assert!(matches!(
            load_manifest(&path),
            Err(TensorIoError::InconsistentExitSet(_))
        ));
    }

    #[test]
    fn rejects_zero_stride_and_bad_json() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = fixture(dir.path());
        m.images[0].exits[0].output_stride = 0;
        assert!(matches!(m.validate(), Err(TensorIoError::InvalidManifest(_))));

        let path = dir.path().join("bad.json");
        fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_manifest(&path), Err(TensorIoError::Parse { .. })));
    }
}
