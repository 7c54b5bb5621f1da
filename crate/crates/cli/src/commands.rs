use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use mess_core::confidence::{ExitConfidence, ExitThresholds};
use mess_core::losses::{pfd_loss, pretrain_loss, ExitSchedule, LossReport, PfdOptions};
use mess_core::search::{
    build_calibration_cache, default_th_img_grid, default_th_pix_grid, search, CacheSettings, CalibrationCache,
    MessInstance, SearchError, SearchLimits, SearchObjective,
};
use mess_core::simulate::{gen_synthetic_fixtures, simulate, FixtureSpec};
use mess_core::tensorio::{load_cost_profile, load_manifest, read_tensor, write_f32_grid};
use mess_core::{place_exit_points, MiouOptions};

use crate::{
    BuildCacheArgs, CacheOptions, Command, ConfidenceArgs, EvalLossArgs, GenFixturesArgs, LossKind, ProfileArgs,
    SearchArgs, SimulateArgs,
};

/// Status for a search whose constraint could not be met.
const INFEASIBLE: u8 = 2;

pub fn run(command: Command, verbose: bool) -> Result<u8> {
    match command {
        Command::Profile(a) => profile(a),
        Command::BuildCache(a) => build_cache(a, verbose),
        Command::Search(a) => run_search(a, verbose),
        Command::Simulate(a) => run_simulate(a, verbose),
        Command::EvalLoss(a) => eval_loss(a, verbose),
        Command::Confidence(a) => confidence(a),
        Command::GenFixtures(a) => gen_fixtures(a),
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.with_context(|| format!("missing required option --{flag}"))
}

/// A closed stdout (e.g. piped into `head`) is not an error.
fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn note(verbose: bool, message: impl FnOnce() -> String) {
    if verbose {
        eprintln!("{}", message());
    }
}

fn profile(a: ProfileArgs) -> Result<u8> {
    let costs = required(a.costs, "costs")?;
    let num_exits = required(a.num_exits, "num-exits")?;
    let profile = load_cost_profile(&costs)?;
    let placement = place_exit_points(&profile, num_exits)?;
    let mut segments = Vec::with_capacity(placement.len());
    let mut prev = 0;
    for &k in placement.blocks() {
        segments.push(json!({
            "from_block": prev,
            "to_block": k,
            "cost": profile.segment_cost(prev, k, a.cost_kind)?,
        }));
        prev = k;
    }
    print_json(&json!({
        "schema": "mess.profile/v1",
        "cost_kind": a.cost_kind,
        "block_count": profile.block_count(),
        "total_cost": profile.segment_cost(0, profile.block_count(), a.cost_kind)?,
        "exit_blocks": placement.blocks(),
        "segments": segments,
    }))?;
    Ok(0)
}

fn cache_settings(o: &CacheOptions) -> CacheSettings {
    CacheSettings {
        th_pix_grid: o.th_pix_grid.clone().unwrap_or_else(default_th_pix_grid),
        estimator: o.estimator,
        morphology: o.morphology,
    }
}

fn cache_summary(cache: &CalibrationCache, path: Option<&Path>) -> serde_json::Value {
    json!({
        "schema": "mess.cache-summary/v1",
        "cache": path,
        "images": cache.image_count(),
        "classes": cache.class_count(),
        "exit_blocks": cache.exit_blocks(),
        "archs": cache.archs().iter().map(|l| l.iter().map(|a| a.to_string()).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "th_pix_grid": cache.th_pix_grid(),
    })
}

fn build_cache_from(manifest: &Path, options: &CacheOptions, verbose: bool) -> Result<CalibrationCache> {
    let manifest = load_manifest(manifest)?;
    note(verbose, || format!("building cache over {} images", manifest.image_count()));
    Ok(build_calibration_cache(&manifest, &cache_settings(options))?)
}

fn build_cache(a: BuildCacheArgs, verbose: bool) -> Result<u8> {
    let manifest = required(a.manifest, "manifest")?;
    let out = required(a.out, "out")?;
    let cache = build_cache_from(&manifest, &a.cache, verbose)?;
    cache.save(&out)?;
    print_json(&cache_summary(&cache, Some(&out)))?;
    Ok(0)
}

fn run_search(a: SearchArgs, verbose: bool) -> Result<u8> {
    let setting = required(a.setting, "setting")?;
    let mode = required(a.objective, "objective")?;
    let bound = required(a.bound, "bound")?;
    let costs = required(a.costs, "costs")?;
    let out = required(a.out, "out")?;
    let profile = load_cost_profile(&costs)?;
    let (cache, th_pix_grid) = match (&a.cache, &a.manifest) {
        (Some(path), _) => (CalibrationCache::load(path)?, a.cache_options.th_pix_grid.clone()),
        (None, Some(manifest)) => (build_cache_from(manifest, &a.cache_options, verbose)?, None),
        (None, None) => bail!("search needs --cache or --manifest"),
    };
    let objective = SearchObjective {
        mode,
        threshold: bound,
        cost_kind: a.cost_kind,
    };
    let limits = SearchLimits {
        max_selected_exits: a.max_exits,
        th_pix_grid,
        th_img_grid: a.th_img_grid.unwrap_or_else(default_th_img_grid),
        edge_options: if a.no_edge_enhance { vec![false] } else { vec![false, true] },
        miou: MiouOptions {
            exclude_class: a.exclude_class,
        },
    };
    let settings = cache.settings();
    let (outcome, status) = match search(&objective, &cache, &profile, setting, &limits) {
        Ok(outcome) => (outcome, 0),
        Err(SearchError::Infeasible {
            constraint,
            best_violating,
        }) => {
            eprintln!("infeasible: no configuration satisfies {constraint}; writing the closest one");
            (*best_violating, INFEASIBLE)
        }
        Err(e) => return Err(e.into()),
    };
    note(verbose, || {
        format!(
            "space {} candidates, {} evaluated, {} pruned",
            outcome.space_size, outcome.evaluated, outcome.pruned
        )
    });
    let instance = MessInstance::from_outcome(&outcome, settings.estimator, settings.morphology, a.exclude_class);
    instance.save(&out)?;
    print_json(&json!({
        "schema": "mess.search-summary/v1",
        "instance": out,
        "setting": setting,
        "feasible": outcome.feasible,
        "constraint": objective.constraint(),
        "objective_value": outcome.objective_value,
        "accuracy": outcome.evaluation.accuracy,
        "cost": outcome.evaluation.cost,
        "exit_rates": outcome.evaluation.exit_rates,
        "space_size": outcome.space_size,
        "evaluated": outcome.evaluated,
        "pruned": outcome.pruned,
    }))?;
    Ok(status)
}

fn run_simulate(a: SimulateArgs, verbose: bool) -> Result<u8> {
    let instance = MessInstance::load(&required(a.instance, "instance")?)?;
    let manifest = load_manifest(&required(a.manifest, "manifest")?)?;
    let profile = load_cost_profile(&required(a.costs, "costs")?)?;
    let out = required(a.report, "report")?;
    note(verbose, || format!("replaying {} images", manifest.image_count()));
    let mut report = simulate(&instance, &manifest, &profile)?;
    if a.no_images {
        report.images.clear();
    }
    write_json(&report, &out)?;
    print_json(&json!({
        "schema": "mess.simulate-summary/v1",
        "report": out,
        "setting": report.setting,
        "image_count": report.image_count,
        "miou": report.miou,
        "cost_workload": report.cost_workload,
        "cost_latency": report.cost_latency,
        "exit_rates": report.exit_rates,
    }))?;
    Ok(0)
}

fn eval_loss(a: EvalLossArgs, verbose: bool) -> Result<u8> {
    let kind = required(a.loss, "loss")?;
    let manifest = load_manifest(&required(a.manifest, "manifest")?)?;
    let blocks = manifest.exit_blocks();
    let archs = match a.archs {
        Some(archs) if archs.len() != blocks.len() => {
            bail!("--archs lists {} architectures for {} exits", archs.len(), blocks.len())
        }
        Some(archs) => archs,
        None => blocks
            .iter()
            .map(|&b| manifest.archs_at(b).first().copied().context("exit without architectures"))
            .collect::<Result<_>>()?,
    };
    let schedule = if a.round_robin {
        ExitSchedule::RoundRobin
    } else {
        ExitSchedule::Divisors
    };
    let options = PfdOptions {
        alpha: a.alpha,
        include_final: !a.exclude_final,
        direction: a.kl_direction,
    };
    note(verbose, || format!("evaluating over {} images", manifest.image_count()));
    let reports = (0..manifest.image_count())
        .into_par_iter()
        .map(|image| -> Result<LossReport> {
            let gt = manifest.load_labels(image)?;
            let preds = blocks
                .iter()
                .zip(&archs)
                .map(|(&b, &arch)| manifest.load_prediction(image, b, arch))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(match kind {
                LossKind::Pretrain => pretrain_loss(&preds, &gt, a.batch_index, schedule)?,
                LossKind::Pfd => pfd_loss(&preds, &gt, options)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = LossReport::mean(&reports).context("manifest has no images")?;
    let doc = json!({
        "schema": "mess.loss/v1",
        "loss": match kind { LossKind::Pretrain => "pretrain", LossKind::Pfd => "pfd" },
        "images": reports.len(),
        "exit_blocks": blocks,
        "archs": archs.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
        "report": mean,
    });
    if let Some(out) = &a.out {
        write_json(&doc, out)?;
    }
    print_json(&doc)?;
    Ok(0)
}

fn confidence(a: ConfidenceArgs) -> Result<u8> {
    let path = required(a.pred, "pred")?;
    let th_pix = required(a.th_pix, "th-pix")?;
    ExitThresholds::new(th_pix, 0.0, a.edge_enhance)?;
    let pred = read_tensor(&path)?;
    let conf = ExitConfidence::compute(&pred, a.estimator, a.os, a.morphology)?;
    let c_img = conf.image_confidence(th_pix, a.edge_enhance);
    if let Some(out) = &a.map_out {
        let map = if a.edge_enhance { &conf.enhanced } else { &conf.plain };
        write_f32_grid(map.rows(), map.cols(), map.values().iter().map(|&v| v as f32), out)?;
    }
    print_json(&json!({
        "schema": "mess.confidence/v1",
        "pred": path,
        "estimator": a.estimator,
        "th_pix": th_pix,
        "edge_enhancement": a.edge_enhance,
        "c_img": c_img,
        "map": a.map_out,
    }))?;
    Ok(0)
}

fn gen_fixtures(a: GenFixturesArgs) -> Result<u8> {
    let out: PathBuf = required(a.out, "out")?;
    let d = FixtureSpec::default();
    let spec = FixtureSpec {
        seed: a.seed,
        images: a.images.unwrap_or(d.images),
        rows: a.rows.unwrap_or(d.rows),
        cols: a.cols.unwrap_or(d.cols),
        classes: a.classes.unwrap_or(d.classes),
        ladder: a.ladder.unwrap_or(d.ladder),
        confidence_correlation: a.confidence_correlation.unwrap_or(d.confidence_correlation),
        archs_per_exit: a.archs_per_exit.unwrap_or(d.archs_per_exit),
        easy_fraction: a.easy_fraction.unwrap_or(d.easy_fraction),
        output_stride: a.output_stride.unwrap_or(d.output_stride),
    };
    let set = gen_synthetic_fixtures(&spec)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let paths = set.write_to(&out)?;
    print_json(&json!({
        "schema": "mess.fixtures/v1",
        "spec": spec,
        "exit_blocks": set.placement.blocks(),
        "calib_manifest": paths.calib_manifest,
        "test_manifest": paths.test_manifest,
        "costs": paths.costs,
    }))?;
    Ok(0)
}
