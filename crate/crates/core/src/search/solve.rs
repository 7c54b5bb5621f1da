//! Exhaustive solver for "cheapest config meeting an accuracy bound" and
//! "most accurate config within a cost bound".
//!
//! Candidates are compared under a total order so the answer does not depend
//! on enumeration order or thread count:
//!
//! * min-cost: lower cost, higher accuracy, fewer exits, shallower points,
//!   lower arch index, lower thresholds;
//! * max-accuracy: higher accuracy, lower cost, then the same structural keys.
//!
//! Cost comes from lookups alone, so it is checked first. In min-cost mode a
//! candidate dearer than the incumbent is skipped without computing its
//! accuracy; in max-accuracy mode one over the budget is.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cache::CalibrationCache;
use super::cost::combine_cost;
use super::evaluate::{reach_rates, Evaluation, Evaluator, ResolvedExit};
use super::space::{enumerate_space, InferenceSetting, MessConfig, SelectedExit};
use super::SearchError;
use crate::arch::ExitArch;
use crate::confidence::ExitThresholds;
use crate::metrics::{ConfusionMatrix, MiouOptions};
use crate::profiling::ExitPlacement;
use crate::tensorio::{CostKind, CostProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveMode {
    /// Minimise cost subject to accuracy ≥ threshold.
    MinCost,
    /// Maximise accuracy subject to cost ≤ threshold.
    MaxAcc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchObjective {
    pub mode: ObjectiveMode,
    /// `th_acc` in min-cost mode, `th_cost` in max-accuracy mode.
    pub threshold: f64,
    pub cost_kind: CostKind,
}

impl SearchObjective {
    pub fn min_cost(th_acc: f64, cost_kind: CostKind) -> Self {
        SearchObjective {
            mode: ObjectiveMode::MinCost,
            threshold: th_acc,
            cost_kind,
        }
    }

    pub fn max_acc(th_cost: f64, cost_kind: CostKind) -> Self {
        SearchObjective {
            mode: ObjectiveMode::MaxAcc,
            threshold: th_cost,
            cost_kind,
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        let t = self.threshold;
        let ok = match self.mode {
            ObjectiveMode::MinCost => (0.0..=1.0).contains(&t),
            ObjectiveMode::MaxAcc => t.is_finite() && t > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SearchError::InvalidObjective(format!(
                "{:?} threshold {t}",
                self.mode
            )))
        }
    }

    pub fn is_met(&self, eval: &Evaluation) -> bool {
        match self.mode {
            ObjectiveMode::MinCost => eval.accuracy >= self.threshold,
            ObjectiveMode::MaxAcc => eval.cost <= self.threshold,
        }
    }

    /// Human-readable form of the constraint, e.g. `accuracy >= 0.5`.
    pub fn constraint(&self) -> String {
        match self.mode {
            ObjectiveMode::MinCost => format!("accuracy >= {}", self.threshold),
            ObjectiveMode::MaxAcc => format!("cost <= {}", self.threshold),
        }
    }
}

pub fn default_th_pix_grid() -> Vec<f64> {
    (50..=95)
        .step_by(5)
        .chain(std::iter::once(99))
        .map(|i| i as f64 / 100.0)
        .collect()
}

pub fn default_th_img_grid() -> Vec<f64> {
    (0..=20).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchLimits {
    pub max_selected_exits: usize,
    /// `th_pix` values to try; `None` uses the whole cache grid. Every value
    /// must lie on the cache grid.
    pub th_pix_grid: Option<Vec<f64>>,
    pub th_img_grid: Vec<f64>,
    pub edge_options: Vec<bool>,
    pub miou: MiouOptions,
}

impl Default for SearchLimits {
    fn default() -> Self {
        SearchLimits {
            max_selected_exits: 4,
            th_pix_grid: None,
            th_img_grid: default_th_img_grid(),
            edge_options: vec![false, true],
            miou: MiouOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub config: MessConfig,
    pub evaluation: Evaluation,
    pub objective: SearchObjective,
    /// Cost in min-cost mode, accuracy in max-accuracy mode.
    pub objective_value: f64,
    pub feasible: bool,
    /// Candidates in the space after setting and exit-count filtering.
    pub space_size: u64,
    /// Candidates whose accuracy was computed.
    pub evaluated: u64,
    /// Candidates rejected on cost alone.
    pub pruned: u64,
}

/// Threshold choice for one routed exit.
#[derive(Debug, Clone, Copy)]
struct ThresholdOption {
    pix: usize,
    thresholds: ExitThresholds,
}

#[derive(Debug, Clone)]
struct Candidate {
    /// `(point, arch, thresholds)` per selected exit, shallow first.
    exits: Vec<(usize, ExitArch, ExitThresholds)>,
    cost: f64,
    accuracy: f64,
}

fn structural_order(a: &Candidate, b: &Candidate) -> Ordering {
    a.exits
        .len()
        .cmp(&b.exits.len())
        .then_with(|| a.exits.iter().map(|e| e.0).cmp(b.exits.iter().map(|e| e.0)))
        .then_with(|| {
            a.exits
                .iter()
                .map(|e| e.1.index())
                .cmp(b.exits.iter().map(|e| e.1.index()))
        })
        .then_with(|| {
            // Thresholds that the calibration split cannot tell apart are
            // resolved towards the stricter policy, i.e. fewer exits on
            // unseen images.
            for (x, y) in a.exits.iter().zip(&b.exits) {
                let o = y
                    .2
                    .th_pix
                    .total_cmp(&x.2.th_pix)
                    .then(y.2.th_img.total_cmp(&x.2.th_img))
                    .then(x.2.edge_enhancement.cmp(&y.2.edge_enhancement));
                if o != Ordering::Equal {
                    return o;
                }
            }
            Ordering::Equal
        })
}

/// `Less` means `a` is preferred.
fn order(mode: ObjectiveMode, a: &Candidate, b: &Candidate) -> Ordering {
    let by_cost = a.cost.total_cmp(&b.cost);
    let by_acc = b.accuracy.total_cmp(&a.accuracy);
    match mode {
        ObjectiveMode::MinCost => by_cost.then(by_acc),
        ObjectiveMode::MaxAcc => by_acc.then(by_cost),
    }
    .then_with(|| structural_order(a, b))
}

fn keep_best(slot: &mut Option<Candidate>, cand: Candidate, mode: ObjectiveMode) {
    let replace = match slot {
        None => true,
        Some(cur) => order(mode, &cand, cur) == Ordering::Less,
    };
    if replace {
        *slot = Some(cand);
    }
}

fn opposite(mode: ObjectiveMode) -> ObjectiveMode {
    match mode {
        ObjectiveMode::MinCost => ObjectiveMode::MaxAcc,
        ObjectiveMode::MaxAcc => ObjectiveMode::MinCost,
    }
}

#[derive(Debug, Default)]
struct UnitResult {
    best: Option<Candidate>,
    violating: Option<Candidate>,
    total: u64,
    evaluated: u64,
    pruned: u64,
}

struct Problem<'e, 'c> {
    ev: &'e Evaluator<'c>,
    setting: InferenceSetting,
    objective: SearchObjective,
    options: Vec<ThresholdOption>,
    /// Cost of some known feasible candidate, for min-cost pruning.
    bound: Option<f64>,
}

impl Problem<'_, '_> {
    fn routed(&self, k: usize) -> usize {
        if self.setting == InferenceSetting::InputDependent {
            k - 1
        } else {
            0
        }
    }

    /// Runs one skeleton, optionally with the first routed exit's threshold
    /// option fixed.
    fn run_unit(&self, skeleton: &[(usize, usize, ExitArch)], first: Option<usize>) -> Result<UnitResult, SearchError> {
        let cache = self.ev.cache();
        let n = cache.image_count();
        let k = skeleton.len();
        let routed = self.routed(k);
        let mode = self.objective.mode;
        let mut exits: Vec<ResolvedExit> = skeleton
            .iter()
            .map(|&(point, arch_pos, _)| ResolvedExit {
                point,
                arch_pos,
                slot: cache.slot_index(point, arch_pos),
                pix: 0,
                th_img: 0.0,
                edge: false,
            })
            .collect();
        let costs = self.ev.selected_costs(&exits);
        let mut exit_of = vec![0u8; n];
        let mut counts = vec![0usize; k];
        let mut scratch = ConfusionMatrix::zeros(cache.class_count());
        let mut out = UnitResult::default();

        // Mixed-radix counter over the routed exits' threshold options.
        let fixed = usize::from(first.is_some());
        let mut digits = vec![0usize; routed];
        if let Some(f) = first {
            digits[0] = f;
        }
        loop {
            let mut thresholds = Vec::with_capacity(k);
            for (j, e) in exits.iter_mut().enumerate() {
                let t = if j < routed {
                    let o = self.options[digits[j]];
                    e.pix = o.pix;
                    e.th_img = o.thresholds.th_img;
                    e.edge = o.thresholds.edge_enhancement;
                    o.thresholds
                } else {
                    ExitThresholds::default()
                };
                thresholds.push(t);
            }
            out.total += 1;

            let rates = if self.setting == InferenceSetting::InputDependent {
                self.ev.route(&exits, &mut exit_of, &mut counts);
                reach_rates(&counts, n)
            } else {
                vec![1.0; k]
            };
            let cost = combine_cost(self.setting, &costs, Some(&rates))?;

            let skip_accuracy = match mode {
                ObjectiveMode::MinCost => {
                    let bound = match (&out.best, self.bound) {
                        (Some(b), Some(g)) => Some(b.cost.min(g)),
                        (Some(b), None) => Some(b.cost),
                        (None, g) => g,
                    };
                    bound.is_some_and(|b| cost > b)
                }
                ObjectiveMode::MaxAcc => {
                    cost > self.objective.threshold
                        && out.violating.as_ref().is_some_and(|v| cost > v.cost)
                }
            };
            if skip_accuracy {
                out.pruned += 1;
            } else {
                let accuracy = if self.setting == InferenceSetting::InputDependent {
                    self.ev.routed_accuracy(&exits, &exit_of, &mut scratch)?
                } else {
                    self.ev.slot_accuracy(exits[0].slot)?
                };
                out.evaluated += 1;
                let cand = Candidate {
                    exits: skeleton
                        .iter()
                        .zip(&thresholds)
                        .map(|(&(p, _, a), &t)| (p, a, t))
                        .collect(),
                    cost,
                    accuracy,
                };
                let feasible = match mode {
                    ObjectiveMode::MinCost => accuracy >= self.objective.threshold,
                    ObjectiveMode::MaxAcc => cost <= self.objective.threshold,
                };
                if feasible {
                    keep_best(&mut out.best, cand, mode);
                } else if out.best.is_none() {
                    keep_best(&mut out.violating, cand, opposite(mode));
                }
            }

            // Advance, leaving a fixed first digit alone.
            let mut i = routed;
            loop {
                if i == fixed {
                    return Ok(out);
                }
                i -= 1;
                digits[i] += 1;
                if digits[i] < self.options.len() {
                    break;
                }
                digits[i] = 0;
            }
        }
    }
}

fn threshold_options(cache: &CalibrationCache, limits: &SearchLimits) -> Result<Vec<ThresholdOption>, SearchError> {
    let pix_values: Vec<f64> = limits
        .th_pix_grid
        .clone()
        .unwrap_or_else(|| cache.th_pix_grid().to_vec());
    let mut pix = pix_values
        .iter()
        .map(|&t| {
            cache
                .th_pix_index(t)
                .map(|i| (i, cache.th_pix_grid()[i]))
                .ok_or(SearchError::ThresholdNotInGrid(t))
        })
        .collect::<Result<Vec<_>, _>>()?;
    pix.sort_by(|a, b| a.1.total_cmp(&b.1));
    pix.dedup_by_key(|p| p.0);
    let mut img = limits.th_img_grid.clone();
    if img.is_empty() || img.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(SearchError::InvalidLimits(
            "th_img grid must be non-empty within [0, 1]".into(),
        ));
    }
    img.sort_by(f64::total_cmp);
    img.dedup();
    let mut edges = limits.edge_options.clone();
    edges.sort();
    edges.dedup();
    if pix.is_empty() || edges.is_empty() {
        return Err(SearchError::InvalidLimits(
            "th_pix grid and edge options must be non-empty".into(),
        ));
    }
    let mut out = Vec::with_capacity(pix.len() * img.len() * edges.len());
    for &(i, th_pix) in &pix {
        for &th_img in &img {
            for &edge in &edges {
                out.push(ThresholdOption {
                    pix: i,
                    thresholds: ExitThresholds {
                        th_pix,
                        th_img,
                        edge_enhancement: edge,
                    },
                });
            }
        }
    }
    Ok(out)
}

fn to_config(setting: InferenceSetting, cache: &CalibrationCache, cand: &Candidate) -> MessConfig {
    let mut exits = vec![None; cache.exit_blocks().len()];
    for &(p, arch, thresholds) in &cand.exits {
        exits[p] = Some(SelectedExit { arch, thresholds });
    }
    MessConfig {
        setting,
        exit_blocks: cache.exit_blocks().to_vec(),
        exits,
    }
}

/// Exhaustive search over every admissible configuration in the cache.
pub fn search(
    objective: &SearchObjective,
    cache: &CalibrationCache,
    profile: &CostProfile,
    setting: InferenceSetting,
    limits: &SearchLimits,
) -> Result<SearchOutcome, SearchError> {
    objective.validate()?;
    if limits.max_selected_exits == 0 {
        return Err(SearchError::InvalidLimits(
            "max_selected_exits must be at least 1".into(),
        ));
    }
    let ev = Evaluator::new(cache, profile, objective.cost_kind)?.with_miou_options(limits.miou);
    let options = threshold_options(cache, limits)?;
    let placement = ExitPlacement::from_blocks(cache.exit_blocks().to_vec())
        .ok_or_else(|| SearchError::CacheFormat("exit blocks not strictly increasing".into()))?;

    let skeletons: Vec<Vec<(usize, usize, ExitArch)>> = enumerate_space(&placement, cache.archs())?
        .filter(|s| {
            let pattern: Vec<bool> = s.iter().map(Option::is_some).collect();
            setting.admits(&pattern) && pattern.iter().filter(|p| **p).count() <= limits.max_selected_exits
        })
        .map(|s| {
            s.iter()
                .enumerate()
                .filter_map(|(p, a)| a.map(|a| (p, cache.arch_pos(p, a).expect("arch from cache"), a)))
                .collect()
        })
        .collect();
    if skeletons.is_empty() {
        return Err(SearchError::EmptySpace);
    }

    let mut problem = Problem {
        ev: &ev,
        setting,
        objective: *objective,
        options,
        bound: None,
    };

    // Single-exit candidates are cheap to score and give min-cost mode a
    // pruning bound before the large threshold products run.
    if objective.mode == ObjectiveMode::MinCost {
        let singles: Vec<UnitResult> = skeletons
            .iter()
            .filter(|s| s.len() == 1)
            .map(|s| problem.run_unit(s, None))
            .collect::<Result<_, _>>()?;
        problem.bound = singles
            .iter()
            .filter_map(|u| u.best.as_ref().map(|b| b.cost))
            .min_by(f64::total_cmp);
    }

    let units: Vec<(usize, Option<usize>)> = skeletons
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            let split = problem.routed(s.len()) > 0;
            let firsts: Vec<Option<usize>> = if split {
                (0..problem.options.len()).map(Some).collect()
            } else {
                vec![None]
            };
            firsts.into_iter().map(move |f| (i, f))
        })
        .collect();
    let results: Vec<UnitResult> = units
        .par_iter()
        .map(|&(i, f)| problem.run_unit(&skeletons[i], f))
        .collect::<Result<_, _>>()?;

    let mode = objective.mode;
    let mut best = None;
    let mut violating = None;
    let (mut total, mut evaluated, mut pruned) = (0, 0, 0);
    for r in results {
        total += r.total;
        evaluated += r.evaluated;
        pruned += r.pruned;
        if let Some(b) = r.best {
            keep_best(&mut best, b, mode);
        }
        if let Some(v) = r.violating {
            keep_best(&mut violating, v, opposite(mode));
        }
    }

    let feasible = best.is_some();
    let chosen = best.or(violating).expect("non-empty space yields a candidate");
    let config = to_config(setting, cache, &chosen);
    let evaluation = ev.evaluate(&config)?;
    let objective_value = match mode {
        ObjectiveMode::MinCost => evaluation.cost,
        ObjectiveMode::MaxAcc => evaluation.accuracy,
    };
    let outcome = SearchOutcome {
        config,
        evaluation,
        objective: *objective,
        objective_value,
        feasible,
        space_size: total,
        evaluated,
        pruned,
    };
    if feasible {
        Ok(outcome)
    } else {
        Err(SearchError::Infeasible {
            constraint: objective.constraint(),
            best_violating: Box::new(outcome),
        })
    }
}
