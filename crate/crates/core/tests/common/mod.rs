//! Helpers shared by the integration tests: a random small search instance
//! and a brute-force solver that scores every candidate with
//! `Evaluator::evaluate` and ranks them with its own comparator.

#![allow(dead_code)]

use std::cmp::Ordering;

use mess_core::search::{
    build_calibration_cache, enumerate_space, CacheSettings, CalibrationCache, Evaluation,
    Evaluator, InferenceSetting, MessConfig, ObjectiveMode, SearchLimits, SearchObjective,
    SelectedExit,
};
use mess_core::simulate::{gen_synthetic_fixtures, CounterRng, FixtureSet, FixtureSpec};
use mess_core::{ExitPlacement, ExitThresholds};

pub struct Instance {
    pub set: FixtureSet,
    pub cache: CalibrationCache,
    pub limits: SearchLimits,
}

/// At most 3 exit points, 4 archs per early point, 5 grid values and 50
/// calibration images of 32×32 pixels.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = CounterRng::new(seed, &[0xACCE]);
    let exits = 1 + rng.below(3);
    let mut ladder: Vec<f64> = (0..exits).map(|_| 0.4 + 0.55 * rng.uniform()).collect();
    ladder.sort_by(f64::total_cmp);
    let calib = 6 + rng.below(45);
    let spec = FixtureSpec {
        seed,
        images: 2 * calib,
        rows: 32,
        cols: 32,
        classes: 3 + rng.below(3),
        ladder,
        confidence_correlation: rng.uniform(),
        archs_per_exit: 1 + rng.below(4),
        easy_fraction: 0.3 + 0.4 * rng.uniform(),
        output_stride: 1,
    };
    let set = gen_synthetic_fixtures(&spec).unwrap();
    let pix_pool = [0.5, 0.6, 0.7, 0.8, 0.9];
    let mut pix: Vec<f64> = pix_pool.iter().copied().filter(|_| rng.below(2) == 0).collect();
    if pix.is_empty() {
        pix.push(pix_pool[rng.below(5)]);
    }
    let cache = build_calibration_cache(
        &set.calib,
        &CacheSettings {
            th_pix_grid: pix.clone(),
            ..CacheSettings::default()
        },
    )
    .unwrap();
    let img_count = 1 + rng.below(5);
    let mut img: Vec<f64> = (0..img_count).map(|_| rng.below(21) as f64 / 20.0).collect();
    img.sort_by(f64::total_cmp);
    img.dedup();
    let limits = SearchLimits {
        max_selected_exits: 1 + rng.below(3),
        th_pix_grid: if rng.below(2) == 0 { None } else { Some(vec![pix[rng.below(pix.len())]]) },
        th_img_grid: img,
        edge_options: vec![false, true],
        ..SearchLimits::default()
    };
    Instance { set, cache, limits }
}

/// Every candidate the search is expected to consider.
pub fn all_candidates(cache: &CalibrationCache, setting: InferenceSetting, limits: &SearchLimits) -> Vec<MessConfig> {
    let placement = ExitPlacement::from_blocks(cache.exit_blocks().to_vec()).unwrap();
    let pix = limits.th_pix_grid.clone().unwrap_or_else(|| cache.th_pix_grid().to_vec());
    let mut options = Vec::new();
    for &p in &pix {
        for &i in &limits.th_img_grid {
            for &e in &limits.edge_options {
                options.push(ExitThresholds {
                    th_pix: p,
                    th_img: i,
                    edge_enhancement: e,
                });
            }
        }
    }
    let mut out = Vec::new();
    for skeleton in enumerate_space(&placement, cache.archs()).unwrap() {
        let pattern: Vec<bool> = skeleton.iter().map(Option::is_some).collect();
        let k = pattern.iter().filter(|p| **p).count();
        if !setting.admits(&pattern) || k > limits.max_selected_exits {
            continue;
        }
        let routed = if setting == InferenceSetting::InputDependent { k - 1 } else { 0 };
        let combos = options.len().pow(routed as u32);
        for mut code in 0..combos {
            let mut chosen = Vec::with_capacity(routed);
            for _ in 0..routed {
                chosen.push(options[code % options.len()]);
                code /= options.len();
            }
            let mut j = 0;
            let exits = skeleton
                .iter()
                .map(|a| {
                    a.map(|arch| {
                        let thresholds = if j < routed { chosen[j] } else { ExitThresholds::default() };
                        j += 1;
                        SelectedExit { arch, thresholds }
                    })
                })
                .collect();
            out.push(MessConfig {
                setting,
                exit_blocks: cache.exit_blocks().to_vec(),
                exits,
            });
        }
    }
    out
}

fn key_cmp(a: &(MessConfig, Evaluation), b: &(MessConfig, Evaluation), mode: ObjectiveMode) -> Ordering {
    let cost = a.1.cost.total_cmp(&b.1.cost);
    let acc = b.1.accuracy.total_cmp(&a.1.accuracy);
    let primary = match mode {
        ObjectiveMode::MinCost => cost.then(acc),
        ObjectiveMode::MaxAcc => acc.then(cost),
    };
    let structure = |c: &MessConfig| {
        let sel: Vec<_> = c.selected().collect();
        let points: Vec<usize> = sel.iter().map(|s| s.0).collect();
        let archs: Vec<usize> = sel.iter().map(|s| s.2.arch.index()).collect();
        let th: Vec<(f64, f64, bool)> = sel
            .iter()
            .map(|s| (s.2.thresholds.th_pix, s.2.thresholds.th_img, s.2.thresholds.edge_enhancement))
            .collect();
        (sel.len(), points, archs, th)
    };
    let (sa, sb) = (structure(&a.0), structure(&b.0));
    primary
        .then(sa.0.cmp(&sb.0))
        .then(sa.1.cmp(&sb.1))
        .then(sa.2.cmp(&sb.2))
        .then_with(|| {
            for (x, y) in sa.3.iter().zip(&sb.3) {
                let o = y.0.total_cmp(&x.0).then(y.1.total_cmp(&x.1)).then(x.2.cmp(&y.2));
                if o != Ordering::Equal {
                    return o;
                }
            }
            Ordering::Equal
        })
}

/// `(feasible, config, evaluation)` of the brute-force optimum, or of the
/// least violating candidate when nothing is feasible.
pub fn oracle(
    objective: &SearchObjective,
    cache: &CalibrationCache,
    ev: &Evaluator,
    setting: InferenceSetting,
    limits: &SearchLimits,
) -> (bool, MessConfig, Evaluation) {
    let scored: Vec<(MessConfig, Evaluation)> = all_candidates(cache, setting, limits)
        .into_iter()
        .map(|c| {
            let e = ev.evaluate(&c).unwrap();
            (c, e)
        })
        .collect();
    let meets = |e: &Evaluation| match objective.mode {
        ObjectiveMode::MinCost => e.accuracy >= objective.threshold,
        ObjectiveMode::MaxAcc => e.cost <= objective.threshold,
    };
    let feasible: Vec<&(MessConfig, Evaluation)> = scored.iter().filter(|s| meets(&s.1)).collect();
    if let Some(best) = feasible.into_iter().min_by(|a, b| key_cmp(a, b, objective.mode)) {
        return (true, best.0.clone(), best.1.clone());
    }
    let other = match objective.mode {
        ObjectiveMode::MinCost => ObjectiveMode::MaxAcc,
        ObjectiveMode::MaxAcc => ObjectiveMode::MinCost,
    };
    let best = scored.iter().min_by(|a, b| key_cmp(a, b, other)).unwrap();
    (false, best.0.clone(), best.1.clone())
}

/// A threshold inside the range the candidates span, so both feasible and
/// infeasible outcomes occur.
pub fn random_bound(rng: &mut CounterRng, mode: ObjectiveMode, ev: &Evaluator, cache: &CalibrationCache) -> f64 {
    let singles: Vec<Evaluation> = cache
        .exit_blocks()
        .iter()
        .zip(cache.archs())
        .enumerate()
        .flat_map(|(p, (_, list))| {
            list.iter().map(move |&a| {
                let mut exits = vec![None; cache.exit_blocks().len()];
                exits[p] = Some(SelectedExit {
                    arch: a,
                    thresholds: ExitThresholds::default(),
                });
                MessConfig {
                    setting: InferenceSetting::Budgeted,
                    exit_blocks: cache.exit_blocks().to_vec(),
                    exits,
                }
            })
        })
        .map(|c| ev.evaluate(&c).unwrap())
        .collect();
    let (lo, hi) = match mode {
        ObjectiveMode::MinCost => singles.iter().fold((1.0f64, 0.0f64), |(l, h), e| (l.min(e.accuracy), h.max(e.accuracy))),
        ObjectiveMode::MaxAcc => singles.iter().fold((f64::MAX, 0.0f64), |(l, h), e| (l.min(e.cost), h.max(e.cost))),
    };
    let t = lo - 0.05 * (hi - lo) + 1.1 * (hi - lo) * rng.uniform();
    match mode {
        ObjectiveMode::MinCost => t.clamp(0.0, 1.0),
        ObjectiveMode::MaxAcc => t.max(1e-6),
    }
}
