//! Deterministic synthetic calibration and test splits.
//!
//! Ground truth is a background with one rectangle per foreground class.
//! Every image has a level: the first exit that solves it. From that exit on
//! it is predicted as well as the final exit predicts everything; shallower
//! exits get it mostly wrong, with accuracies chosen so that each exit meets
//! its target on average. Correct pixels get a high top-class probability
//! and wrong pixels a low one, scaled by the confidence correlation, so image
//! confidence tells solved images from unsolved ones.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::rng::CounterRng;
use super::SimulateError;
use crate::arch::ExitArch;
use crate::profiling::{place_exit_points, ExitPlacement};
use crate::tensorio::{
    save_manifest, write_label_map, write_tensor, ArchPrediction, BlockCost, CostProfile,
    DatasetManifest, ExitEntry, ExitOverhead, ImageEntry, LabelMap, PredictionSource,
    PredictionTensor, TensorIoError,
};

/// Backbone workloads in GFLOPs, shallow first.
const BLOCK_GFLOPS: [f64; 12] = [3.2, 4.8, 6.4, 6.4, 7.6, 8.8, 8.8, 8.8, 9.6, 9.6, 10.4, 10.4];

/// Early-exit head candidates, lightest first.
const EARLY_ARCHS: [&str; 6] = ["c3b0r0h0", "c2b1r0h1", "c1b2r1h1", "c0b3r1h1", "c2b0r1h0", "c1b1r0h0"];

const FINAL_ARCH: &str = "c0b0r0h1";

/// Half-width of the triangular confidence distribution.
const CONFIDENCE_SPREAD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub seed: u64,
    /// Images over both splits; the first half is calibration.
    pub images: usize,
    pub rows: usize,
    pub cols: usize,
    pub classes: usize,
    /// Target pixel accuracy per exit, shallow first, non-decreasing.
    pub ladder: Vec<f64>,
    /// 0 makes confidence independent of correctness, 1 separates it most.
    pub confidence_correlation: f64,
    /// Architectures per early exit; the final exit has one.
    pub archs_per_exit: usize,
    /// Share of images solved at the first exit; the rest are spread evenly
    /// over the deeper exits.
    pub easy_fraction: f64,
    pub output_stride: u32,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            seed: 0,
            images: 200,
            rows: 32,
            cols: 32,
            classes: 5,
            ladder: vec![0.6, 0.8, 0.95],
            confidence_correlation: 0.8,
            archs_per_exit: 2,
            easy_fraction: 0.6,
            output_stride: 1,
        }
    }
}

impl FixtureSpec {
    fn validate(&self) -> Result<(), SimulateError> {
        let bad = |m: String| Err(SimulateError::BadLadder(m));
        if self.ladder.is_empty() {
            return bad("ladder is empty".into());
        }
        if self.ladder.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad(format!("accuracies {:?} outside [0, 1]", self.ladder));
        }
        if self.ladder.windows(2).any(|w| w[0] > w[1]) {
            return bad(format!("accuracies {:?} decrease with depth", self.ladder));
        }
        if self.ladder.len() > BLOCK_GFLOPS.len() {
            return bad(format!("at most {} exits", BLOCK_GFLOPS.len()));
        }
        let invalid = |m: &str| Err(SimulateError::InvalidFixture(m.into()));
        if self.images < 2 {
            return invalid("need at least 2 images");
        }
        if self.rows == 0 || self.cols == 0 {
            return invalid("image dims must be positive");
        }
        if self.classes < 2 || self.classes > u16::MAX as usize {
            return invalid("class count must be in 2..65535");
        }
        if !(0.0..=1.0).contains(&self.confidence_correlation) {
            return invalid("confidence correlation must be in [0, 1]");
        }
        if self.archs_per_exit == 0 || self.archs_per_exit > EARLY_ARCHS.len() {
            return invalid("archs per exit must be in 1..=6");
        }
        if !(0.0..1.0).contains(&self.easy_fraction) {
            return invalid("easy fraction must be in [0, 1)");
        }
        if self.output_stride == 0 {
            return invalid("output stride must be positive");
        }
        Ok(())
    }
}

/// In-memory split: labels and every exit's prediction per image.
#[derive(Debug, Clone)]
pub struct FixtureSplit {
    pub name: String,
    classes: usize,
    image_ids: Vec<String>,
    exit_blocks: Vec<usize>,
    archs: Vec<Vec<ExitArch>>,
    output_stride: u32,
    labels: Vec<LabelMap>,
    /// `[image][slot]`, slots ordered by exit point then arch.
    predictions: Vec<Vec<PredictionTensor>>,
    /// 1-based exit that first solves each image.
    pub levels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub spec: FixtureSpec,
    pub profile: CostProfile,
    pub placement: ExitPlacement,
    pub calib: FixtureSplit,
    pub test: FixtureSplit,
}

/// Paths written by [`FixtureSet::write_to`].
#[derive(Debug, Clone, PartialEq)]
pub struct FixturePaths {
    pub calib_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub costs: PathBuf,
}

fn arch(code: &str) -> ExitArch {
    code.parse().expect("built-in arch code")
}

/// Head overhead grows with block count, channels and the DLB head.
fn head_gflops(a: ExitArch) -> f64 {
    let base = 0.25 + 0.35 * a.num_blocks as f64 + if a.rdi { 0.05 } else { 0.0 };
    let head = if a.head == crate::arch::Head::Dlb { 0.15 } else { 0.0 };
    (base + head) * 2.0 / a.channel_divisor() as f64
}

fn latency_ms(gflops: f64) -> f64 {
    0.05 + 0.12 * gflops
}

fn build_profile(placement: &ExitPlacement, archs: &[Vec<ExitArch>]) -> CostProfile {
    let blocks = BLOCK_GFLOPS
        .iter()
        .map(|&g| BlockCost {
            gflops: g,
            latency_ms: Some(latency_ms(g)),
        })
        .collect();
    let heads = placement
        .blocks()
        .iter()
        .zip(archs)
        .flat_map(|(&block, list)| {
            list.iter().map(move |&a| {
                let g = head_gflops(a);
                ExitOverhead {
                    block,
                    arch: a,
                    gflops: g,
                    latency_ms: Some(latency_ms(g)),
                }
            })
        })
        .collect();
    CostProfile::new(blocks, heads)
}

/// Background plus one rectangle per foreground class. Rectangles have a
/// fixed size and sit at random offsets in distinct, randomly chosen cells
/// of a square grid, so every image has the same class histogram.
fn ground_truth(rng: &mut CounterRng, spec: &FixtureSpec) -> LabelMap {
    let (rows, cols) = (spec.rows, spec.cols);
    let foreground = spec.classes - 1;
    let side = (1..).find(|g| g * g >= foreground).expect("grid exists");
    let (cell_h, cell_w) = ((rows / side).max(1), (cols / side).max(1));
    let (h, w) = ((cell_h * 3 / 4).max(1), (cell_w * 3 / 4).max(1));
    let mut cells: Vec<usize> = (0..side * side).collect();
    rng.shuffle(&mut cells);
    let mut data = vec![0u16; rows * cols];
    for (class, &cell) in (1..=foreground).zip(&cells) {
        let r0 = ((cell / side) * cell_h + rng.below(cell_h - h + 1)).min(rows - h);
        let c0 = ((cell % side) * cell_w + rng.below(cell_w - w + 1)).min(cols - w);
        for r in r0..r0 + h {
            data[r * cols + c0..r * cols + c0 + w].fill(class as u16);
        }
    }
    LabelMap::new(rows, cols, data).expect("dims match")
}

/// Accuracy `(solved, unsolved)` at an exit with target `t` when a share
/// `solved_share` of the images is solved there or earlier.
fn tier_accuracy(t: f64, final_target: f64, solved_share: f64) -> (f64, f64) {
    if solved_share <= 0.0 || solved_share >= 1.0 {
        return (t, t);
    }
    let solved = final_target.min(t / solved_share);
    let unsolved = ((t - solved_share * solved) / (1.0 - solved_share)).clamp(0.0, 1.0);
    (solved, unsolved)
}

/// Share of images solved by exit `n` (1-based) out of `exits`: the easy
/// fraction at the first exit, the remainder spread evenly over the others.
fn solved_share(easy_fraction: f64, n: usize, exits: usize) -> f64 {
    if exits == 1 || n >= exits {
        return 1.0;
    }
    easy_fraction + (1.0 - easy_fraction) * (n - 1) as f64 / (exits - 1) as f64
}

/// Inverse CDF of the symmetric triangular distribution on
/// `[mean − half_width, mean + half_width]`.
fn triangular_quantile(mean: f64, half_width: f64, u: f64) -> f64 {
    if u < 0.5 {
        mean - half_width + half_width * (2.0 * u).sqrt()
    } else {
        mean + half_width - half_width * (2.0 * (1.0 - u)).sqrt()
    }
}

/// Softmax volume with exactly `round(accuracy · pixels)` correct pixels.
///
/// Top probabilities are stratified quantiles of the correct or incorrect
/// confidence distribution, scattered over randomly chosen pixels. Images with the same accuracy therefore share one confidence
/// histogram and only differ in layout, which keeps image-level confidence a
/// function of difficulty rather than of sampling noise.
fn prediction(
    rng: &mut CounterRng,
    spec: &FixtureSpec,
    gt: &LabelMap,
    accuracy: f64,
) -> PredictionTensor {
    let m = spec.classes;
    let plane = spec.rows * spec.cols;
    let wrong_count = plane - ((accuracy * plane as f64).round() as usize).min(plane);
    let mut order: Vec<usize> = (0..plane).collect();
    rng.shuffle(&mut order);
    let (wrong, right) = order.split_at(wrong_count);
    let rho = spec.confidence_correlation;
    let mut top = vec![0f64; plane];
    let mut correct = vec![false; plane];
    for (pixels, mean, is_correct) in [(right, 0.75 + 0.2 * rho, true), (wrong, 0.75 - 0.2 * rho, false)] {
        let n = pixels.len() as f64;
        for (i, &p) in pixels.iter().enumerate() {
            let u = (i as f64 + 0.5) / n;
            top[p] = triangular_quantile(mean, CONFIDENCE_SPREAD, u).clamp(0.52, 1.0);
            correct[p] = is_correct;
        }
    }
    let mut data = vec![0f32; m * plane];
    let mut weights = vec![0f64; m];
    for p in 0..plane {
        let g = gt.data()[p] as usize;
        let label = if correct[p] { g } else { (g + 1 + rng.below(m - 1)) % m };
        let rest = 1.0 - top[p];
        let mut total = 0.0;
        for (k, w) in weights.iter_mut().enumerate() {
            *w = if k == label { 0.0 } else { 0.05 + rng.uniform() };
            total += *w;
        }
        for (k, w) in weights.iter().enumerate() {
            let v = if k == label { top[p] } else { rest * w / total };
            data[k * plane + p] = v as f32;
        }
    }
    PredictionTensor::new(m, spec.rows, spec.cols, data).expect("generated volume is a valid softmax")
}

fn build_split(
    spec: &FixtureSpec,
    name: &str,
    global: std::ops::Range<usize>,
    exit_blocks: &[usize],
    archs: &[Vec<ExitArch>],
    targets: &[Vec<f64>],
) -> FixtureSplit {
    let n = global.len();
    let exits = exit_blocks.len();
    let mut positions: Vec<usize> = (0..n).collect();
    CounterRng::new(spec.seed, &[u64::MAX, global.start as u64]).shuffle(&mut positions);
    // Exact level counts per split, so both splits share one difficulty mix.
    let mut levels = vec![exits; n];
    let mut from = 0;
    for level in 1..exits {
        let to = (solved_share(spec.easy_fraction, level, exits) * n as f64).round() as usize;
        for &i in &positions[from..to.max(from)] {
            levels[i] = level;
        }
        from = to.max(from);
    }
    let final_target = *spec.ladder.last().expect("validated ladder");

    let mut labels = Vec::with_capacity(n);
    let mut predictions = Vec::with_capacity(n);
    for (local, g) in global.clone().enumerate() {
        let g = g as u64;
        let gt = ground_truth(&mut CounterRng::new(spec.seed, &[g, 0]), spec);
        let mut preds = Vec::new();
        for (point, list) in archs.iter().enumerate() {
            for (k, _) in list.iter().enumerate() {
                let mut rng = CounterRng::new(spec.seed, &[g, 1, point as u64, k as u64]);
                let share = solved_share(spec.easy_fraction, point + 1, exits);
                let (solved, unsolved) = tier_accuracy(targets[point][k], final_target, share);
                let acc = if levels[local] <= point + 1 { solved } else { unsolved };
                preds.push(prediction(&mut rng, spec, &gt, acc).with_exit_id(exit_blocks[point] as u32));
            }
        }
        labels.push(gt);
        predictions.push(preds);
    }
    FixtureSplit {
        name: name.to_string(),
        classes: spec.classes,
        image_ids: (0..n).map(|i| format!("{name}-{i:04}")).collect(),
        exit_blocks: exit_blocks.to_vec(),
        archs: archs.to_vec(),
        output_stride: spec.output_stride,
        labels,
        predictions,
        levels,
    }
}

pub fn gen_synthetic_fixtures(spec: &FixtureSpec) -> Result<FixtureSet, SimulateError> {
    spec.validate()?;
    let exits = spec.ladder.len();
    let layout = CostProfile::from_workloads(&BLOCK_GFLOPS);
    let placement = place_exit_points(&layout, exits)?;
    let archs: Vec<Vec<ExitArch>> = (0..exits)
        .map(|n| {
            if n + 1 == exits {
                vec![arch(FINAL_ARCH)]
            } else {
                EARLY_ARCHS[..spec.archs_per_exit].iter().map(|c| arch(c)).collect()
            }
        })
        .collect();
    // Heavier heads sit slightly above the ladder, lighter ones below.
    let targets: Vec<Vec<f64>> = archs
        .iter()
        .zip(&spec.ladder)
        .map(|(list, &a)| {
            let m = list.len();
            (0..m)
                .map(|k| {
                    let offset = if m > 1 { -0.02 + 0.04 * k as f64 / (m - 1) as f64 } else { 0.0 };
                    (a + offset).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();
    let profile = build_profile(&placement, &archs);
    let calib_n = spec.images / 2;
    let blocks = placement.blocks().to_vec();
    let calib = build_split(spec, "calib", 0..calib_n, &blocks, &archs, &targets);
    let test = build_split(spec, "test", calib_n..spec.images, &blocks, &archs, &targets);
    Ok(FixtureSet {
        spec: spec.clone(),
        profile,
        placement,
        calib,
        test,
    })
}

impl FixtureSplit {
    fn slot(&self, block: usize, arch: ExitArch) -> Option<usize> {
        let point = self.exit_blocks.iter().position(|&b| b == block)?;
        let pos = self.archs[point].iter().position(|&a| a == arch)?;
        Some(self.archs[..point].iter().map(Vec::len).sum::<usize>() + pos)
    }

    pub fn manifest(&self) -> DatasetManifest {
        let images = self
            .image_ids
            .iter()
            .map(|id| ImageEntry {
                image_id: id.clone(),
                label_path: PathBuf::from(format!("labels/{id}.mt")),
                exits: self
                    .exit_blocks
                    .iter()
                    .zip(&self.archs)
                    .map(|(&block, list)| ExitEntry {
                        block,
                        output_stride: self.output_stride,
                        predictions: list
                            .iter()
                            .map(|&a| ArchPrediction {
                                arch: a,
                                path: PathBuf::from(format!("preds/{id}_b{block}_{a}.mt")),
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        DatasetManifest::new(self.classes, 0, images)
    }

    /// Writes the manifest and every tensor under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<PathBuf, TensorIoError> {
        let manifest = self.manifest();
        for (i, entry) in manifest.images.iter().enumerate() {
            write_label_map(&self.labels[i], &dir.join(&entry.label_path))?;
            let paths = entry.exits.iter().flat_map(|e| &e.predictions);
            for (pred, ap) in self.predictions[i].iter().zip(paths) {
                write_tensor(pred, &dir.join(&ap.path))?;
            }
        }
        let path = dir.join("manifest.json");
        save_manifest(&manifest, &path)?;
        Ok(path)
    }
}

impl FixtureSet {
    /// Writes `calib/`, `test/` and `costs.json` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<FixturePaths, TensorIoError> {
        let calib_manifest = self.calib.write_to(&dir.join("calib"))?;
        let test_manifest = self.test.write_to(&dir.join("test"))?;
        let costs = dir.join("costs.json");
        self.profile.save(&costs)?;
        Ok(FixturePaths {
            calib_manifest,
            test_manifest,
            costs,
        })
    }
}

impl PredictionSource for FixtureSplit {
    fn class_count(&self) -> usize {
        self.classes
    }

    fn background_class(&self) -> u16 {
        0
    }

    fn image_count(&self) -> usize {
        self.labels.len()
    }

    fn image_id(&self, image: usize) -> String {
        self.image_ids[image].clone()
    }

    fn exit_blocks(&self) -> Vec<usize> {
        self.exit_blocks.clone()
    }

    fn archs_at(&self, block: usize) -> Vec<ExitArch> {
        let mut list = self
            .exit_blocks
            .iter()
            .position(|&b| b == block)
            .map(|p| self.archs[p].clone())
            .unwrap_or_default();
        list.sort_by_key(|a| a.index());
        list
    }

    fn output_stride(&self, block: usize) -> Option<u32> {
        self.exit_blocks.contains(&block).then_some(self.output_stride)
    }

    fn labels(&self, image: usize) -> Result<LabelMap, TensorIoError> {
        Ok(self.labels[image].clone())
    }

    fn prediction(&self, image: usize, block: usize, arch: ExitArch) -> Result<PredictionTensor, TensorIoError> {
        let slot = self.slot(block, arch).ok_or_else(|| {
            TensorIoError::InconsistentExitSet(format!("no {arch} prediction at block {block}"))
        })?;
        Ok(self.predictions[image][slot].clone())
    }
}
