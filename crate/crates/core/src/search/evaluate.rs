//! Accuracy, cost and exit rates of a configuration, from cache lookups.

use serde::{Deserialize, Serialize};

use super::cache::CalibrationCache;
use super::cost::{combine_cost, CostModel, SelectedCosts};
use super::space::{InferenceSetting, MessConfig};
use super::SearchError;
use crate::confidence::{exit_decision, ExitDecision};
use crate::metrics::{miou_with, ConfusionMatrix, MetricsError, MiouOptions};
use crate::tensorio::{CostKind, CostProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub setting: InferenceSetting,
    /// Dataset mIoU as defined for the setting.
    pub accuracy: f64,
    pub cost: f64,
    /// Fraction of images reaching each selected exit, shallow first.
    pub exit_rates: Vec<f64>,
    /// Images whose output comes from each selected exit.
    pub exit_counts: Vec<usize>,
    /// Dataset mIoU of every selected exit on its own.
    pub checkpoint_accuracy: Vec<f64>,
}

/// A selected exit mapped onto cache slots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ResolvedExit {
    pub point: usize,
    pub arch_pos: usize,
    pub slot: usize,
    pub pix: usize,
    pub th_img: f64,
    pub edge: bool,
}

/// Fraction of images reaching each exit given how many leave at each one.
pub(crate) fn reach_rates(exit_counts: &[usize], images: usize) -> Vec<f64> {
    let mut remaining = images;
    exit_counts
        .iter()
        .map(|&c| {
            let p = remaining as f64 / images as f64;
            remaining -= c;
            p
        })
        .collect()
}

/// Evaluates configurations against one cache and cost profile.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    cache: &'a CalibrationCache,
    costs: CostModel,
    miou: MiouOptions,
    slot_miou: Vec<Result<f64, MetricsError>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(cache: &'a CalibrationCache, profile: &CostProfile, kind: CostKind) -> Result<Self, SearchError> {
        if cache.image_count() == 0 {
            return Err(SearchError::CacheFormat("cache holds no images".into()));
        }
        let costs = CostModel::new(profile, cache.exit_blocks(), cache.archs(), kind)?;
        let mut ev = Evaluator {
            cache,
            costs,
            miou: MiouOptions::default(),
            slot_miou: Vec::new(),
        };
        ev.refresh_slot_miou();
        Ok(ev)
    }

    pub fn with_miou_options(mut self, options: MiouOptions) -> Self {
        self.miou = options;
        self.refresh_slot_miou();
        self
    }

    fn refresh_slot_miou(&mut self) {
        self.slot_miou = self
            .cache
            .slots
            .iter()
            .map(|s| miou_with(&s.total, self.miou))
            .collect();
    }

    pub fn cache(&self) -> &CalibrationCache {
        self.cache
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.costs
    }

    pub fn miou_options(&self) -> MiouOptions {
        self.miou
    }

    pub(crate) fn resolve(&self, config: &MessConfig) -> Result<Vec<ResolvedExit>, SearchError> {
        config.validate()?;
        if config.exit_blocks.len() != self.cache.exit_blocks().len() {
            return Err(SearchError::ConfigSettingMismatch(format!(
                "config has {} exit points, cache has {}",
                config.exit_blocks.len(),
                self.cache.exit_blocks().len()
            )));
        }
        let selected: Vec<_> = config.selected().collect();
        let last = selected.len() - 1;
        selected
            .iter()
            .enumerate()
            .map(|(j, &(_, block, exit))| {
                let point = self
                    .cache
                    .point_of_block(block)
                    .ok_or(SearchError::MissingExitPoint(block))?;
                let arch_pos = self
                    .cache
                    .arch_pos(point, exit.arch)
                    .ok_or(SearchError::UnknownArch { block, arch: exit.arch })?;
                let routed = config.setting == InferenceSetting::InputDependent && j < last;
                let pix = if routed {
                    self.cache
                        .th_pix_index(exit.thresholds.th_pix)
                        .ok_or(SearchError::ThresholdNotInGrid(exit.thresholds.th_pix))?
                } else {
                    0
                };
                Ok(ResolvedExit {
                    point,
                    arch_pos,
                    slot: self.cache.slot_index(point, arch_pos),
                    pix,
                    th_img: exit.thresholds.th_img,
                    edge: exit.thresholds.edge_enhancement,
                })
            })
            .collect()
    }

    pub(crate) fn selected_costs(&self, exits: &[ResolvedExit]) -> SelectedCosts {
        self.costs.selected(exits.iter().map(|e| (e.point, e.arch_pos)))
    }

    /// Walks every image through the exits; `exit_of[i]` receives the
    /// position of the exit image `i` leaves at, and `counts` the number of
    /// images leaving at each exit.
    pub(crate) fn route(&self, exits: &[ResolvedExit], exit_of: &mut [u8], counts: &mut [usize]) {
        counts.iter_mut().for_each(|c| *c = 0);
        let last = exits.len() - 1;
        for (image, slot) in exit_of.iter_mut().enumerate() {
            let j = exits
                .iter()
                .enumerate()
                .position(|(j, e)| {
                    let c = if j == last {
                        0.0
                    } else {
                        self.cache.c_img(e.slot, image, e.pix, e.edge)
                    };
                    exit_decision(c, e.th_img, j == last) == ExitDecision::Exit
                })
                .unwrap_or(last);
            *slot = j as u8;
            counts[j] += 1;
        }
    }

    /// mIoU of the summed per-image matrices at each image's exit.
    /// `scratch` must have the cache's class count.
    pub(crate) fn routed_accuracy(
        &self,
        exits: &[ResolvedExit],
        exit_of: &[u8],
        scratch: &mut ConfusionMatrix,
    ) -> Result<f64, SearchError> {
        let m2 = self.cache.class_count * self.cache.class_count;
        let counts = scratch.counts_mut();
        counts.iter_mut().for_each(|c| *c = 0);
        for (image, &j) in exit_of.iter().enumerate() {
            let cm = self.cache.slot(exits[j as usize].slot).cm(image, m2);
            for (a, b) in counts.iter_mut().zip(cm) {
                *a += b;
            }
        }
        Ok(miou_with(scratch, self.miou)?)
    }

    pub(crate) fn slot_accuracy(&self, slot: usize) -> Result<f64, SearchError> {
        self.slot_miou[slot].clone().map_err(SearchError::from)
    }

    pub fn evaluate(&self, config: &MessConfig) -> Result<Evaluation, SearchError> {
        let exits = self.resolve(config)?;
        let n = self.cache.image_count();
        let k = exits.len();
        let checkpoint_accuracy = exits
            .iter()
            .map(|e| self.slot_accuracy(e.slot))
            .collect::<Result<Vec<_>, _>>()?;
        let costs = self.selected_costs(&exits);
        let (accuracy, exit_counts, exit_rates) = match config.setting {
            InferenceSetting::InputDependent => {
                let mut exit_of = vec![0u8; n];
                let mut counts = vec![0usize; k];
                self.route(&exits, &mut exit_of, &mut counts);
                let acc = self.routed_accuracy(
                    &exits,
                    &exit_of,
                    &mut ConfusionMatrix::zeros(self.cache.class_count),
                )?;
                let rates = reach_rates(&counts, n);
                (acc, counts, rates)
            }
            _ => {
                let mut counts = vec![0usize; k];
                counts[k - 1] = n;
                (checkpoint_accuracy[0], counts, vec![1.0; k])
            }
        };
        let cost = combine_cost(config.setting, &costs, Some(&exit_rates))?;
        Ok(Evaluation {
            setting: config.setting,
            accuracy,
            cost,
            exit_rates,
            exit_counts,
            checkpoint_accuracy,
        })
    }
}

/// One-off evaluation; builds the cost lookups on every call.
pub fn evaluate_config(
    config: &MessConfig,
    cache: &CalibrationCache,
    profile: &CostProfile,
    kind: CostKind,
) -> Result<Evaluation, SearchError> {
    Evaluator::new(cache, profile, kind)?.evaluate(config)
}
