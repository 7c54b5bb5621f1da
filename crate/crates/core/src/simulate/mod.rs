//! Deployment-style replay of a MESS instance on raw tensors, and synthetic
//! fixture generation.

mod fixtures;
mod rng;

pub use fixtures::{gen_synthetic_fixtures, FixturePaths, FixtureSet, FixtureSpec, FixtureSplit};
pub use rng::{mix, CounterRng};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{exit_decision, ConfidenceError, ExitConfidence, ExitDecision};
use crate::metrics::{confusion_matrix, miou_with, pixel_accuracy, ConfusionMatrix, MetricsError, MiouOptions};
use crate::profiling::ProfilingError;
use crate::search::{cost_of, reach_rates, InferenceSetting, MessInstance, SearchError};
use crate::tensorio::{CostKind, CostProfile, PredictionSource, TensorIoError};

pub const REPORT_SCHEMA: &str = "mess.report/v1";

#[derive(Debug, thiserror::Error)]
pub enum SimulateError {
    #[error("instance does not match the manifest: {0}")]
    ManifestMismatch(String),
    #[error("bad accuracy ladder: {0}")]
    BadLadder(String),
    #[error("invalid fixture spec: {0}")]
    InvalidFixture(String),
    #[error(transparent)]
    TensorIo(#[from] TensorIoError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
    #[error(transparent)]
    Profiling(#[from] ProfilingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    /// Block of the exit whose output the image ends with.
    pub exit_block: usize,
    /// `c_img` at each routed exit the image visited, in order.
    pub c_img: Vec<f64>,
    /// Mean IoU of the image on its own; `None` if it has no labelled pixels.
    pub miou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub schema: String,
    pub setting: InferenceSetting,
    pub image_count: usize,
    /// Blocks of the selected exits, shallow first.
    pub exit_blocks: Vec<usize>,
    /// Images whose output comes from each selected exit.
    pub exit_counts: Vec<usize>,
    /// Fraction of images reaching each selected exit.
    pub exit_rates: Vec<f64>,
    pub cost_workload: f64,
    pub cost_latency: Option<f64>,
    /// Dataset mIoU as defined for the setting.
    pub miou: f64,
    pub pixel_accuracy: Option<f64>,
    pub class_iou: Vec<Option<f64>>,
    /// Anytime: dataset mIoU at every selected checkpoint. Single-exit
    /// settings: that exit's mIoU. Input-dependent: empty.
    pub checkpoint_miou: Vec<f64>,
    pub images: Vec<ImageRecord>,
}

struct ImageOutcome {
    record: ImageRecord,
    exit_pos: usize,
    final_cm: ConfusionMatrix,
    /// Anytime only: matrix at each selected exit.
    checkpoints: Vec<ConfusionMatrix>,
}

/// Replays `instance` over every image of `source`.
pub fn simulate(
    instance: &MessInstance,
    source: &dyn PredictionSource,
    profile: &CostProfile,
) -> Result<SimulationReport, SimulateError> {
    let config = &instance.config;
    config.validate().map_err(SimulateError::Search)?;
    let source_blocks = source.exit_blocks();
    if source_blocks != config.exit_blocks {
        return Err(SimulateError::ManifestMismatch(format!(
            "instance exit blocks {:?}, manifest has {:?}",
            config.exit_blocks, source_blocks
        )));
    }
    let selected: Vec<_> = config.selected().collect();
    for &(_, block, exit) in &selected {
        if !source.archs_at(block).contains(&exit.arch) {
            return Err(SimulateError::ManifestMismatch(format!(
                "no {} predictions at block {block}",
                exit.arch
            )));
        }
    }
    let n = source.image_count();
    if n == 0 {
        return Err(SimulateError::ManifestMismatch("manifest has no images".into()));
    }
    let classes = source.class_count();
    let setting = config.setting;
    let k = selected.len();
    let miou_opts = MiouOptions {
        exclude_class: instance.exclude_class,
    };

    let outcomes: Vec<ImageOutcome> = (0..n)
        .into_par_iter()
        .map(|image| -> Result<ImageOutcome, SimulateError> {
            let labels = source.labels(image)?;
            let mut c_img = Vec::new();
            let mut checkpoints = Vec::new();
            let exit_pos = match setting {
                InferenceSetting::InputDependent => {
                    let mut pos = k - 1;
                    for (j, &(_, block, exit)) in selected.iter().enumerate().take(k - 1) {
                        let pred = source.prediction(image, block, exit.arch)?;
                        let os = source
                            .output_stride(block)
                            .ok_or_else(|| SimulateError::ManifestMismatch(format!("no stride for block {block}")))?;
                        let conf = ExitConfidence::compute(&pred, instance.estimator, os as usize, instance.morphology)?;
                        let c = conf.image_confidence(exit.thresholds.th_pix, exit.thresholds.edge_enhancement);
                        c_img.push(c);
                        if exit_decision(c, exit.thresholds.th_img, false) == ExitDecision::Exit {
                            pos = j;
                            break;
                        }
                    }
                    pos
                }
                InferenceSetting::Anytime => {
                    for &(_, block, exit) in &selected {
                        let pred = source.prediction(image, block, exit.arch)?;
                        checkpoints.push(confusion_matrix(&pred.argmax(), &labels, classes)?);
                    }
                    k - 1
                }
                InferenceSetting::FinalOnly | InferenceSetting::Budgeted => 0,
            };
            let final_cm = match checkpoints.last() {
                Some(cm) => cm.clone(),
                None => {
                    let (_, block, exit) = selected[exit_pos];
                    let pred = source.prediction(image, block, exit.arch)?;
                    confusion_matrix(&pred.argmax(), &labels, classes)?
                }
            };
            Ok(ImageOutcome {
                record: ImageRecord {
                    image_id: source.image_id(image),
                    exit_block: selected[exit_pos].1,
                    c_img,
                    miou: miou_with(&final_cm, miou_opts).ok(),
                },
                exit_pos,
                final_cm,
                checkpoints,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut exit_counts = vec![0usize; k];
    let mut total = ConfusionMatrix::zeros(classes);
    let mut checkpoint_cms = vec![ConfusionMatrix::zeros(classes); if setting == InferenceSetting::Anytime { k } else { 0 }];
    for o in &outcomes {
        exit_counts[o.exit_pos] += 1;
        total += &o.final_cm;
        for (acc, cm) in checkpoint_cms.iter_mut().zip(&o.checkpoints) {
            *acc += cm;
        }
    }
    let exit_rates = match setting {
        InferenceSetting::InputDependent => reach_rates(&exit_counts, n),
        _ => vec![1.0; k],
    };
    let checkpoint_miou = match setting {
        InferenceSetting::Anytime => checkpoint_cms
            .iter()
            .map(|cm| miou_with(cm, miou_opts))
            .collect::<Result<Vec<_>, _>>()?,
        InferenceSetting::InputDependent => Vec::new(),
        _ => vec![miou_with(&total, miou_opts)?],
    };
    let miou = match setting {
        InferenceSetting::Anytime => checkpoint_miou[0],
        _ => miou_with(&total, miou_opts)?,
    };
    let cost_workload = cost_of(config, profile, Some(&exit_rates), CostKind::Workload)?;
    let cost_latency = if profile.has_latency() {
        Some(cost_of(config, profile, Some(&exit_rates), CostKind::Latency)?)
    } else {
        None
    };
    Ok(SimulationReport {
        schema: REPORT_SCHEMA.to_string(),
        setting,
        image_count: n,
        exit_blocks: selected.iter().map(|s| s.1).collect(),
        exit_counts,
        exit_rates,
        cost_workload,
        cost_latency,
        miou,
        pixel_accuracy: pixel_accuracy(&total, source.background_class() as usize).ok(),
        class_iou: total.class_iou(),
        checkpoint_miou,
        images: outcomes.into_iter().map(|o| o.record).collect(),
    })
}
