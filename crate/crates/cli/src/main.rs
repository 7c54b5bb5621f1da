//! `mess`: command-line front end for the multi-exit segmentation toolkit.
//!
//! Exit status is 0 on success, 2 when a search constraint cannot be met
//! (the best violating instance is still written) and 1 on any error.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueHint};
use serde::de::DeserializeOwned;

use mess_core::losses::KlDirection;
use mess_core::search::{InferenceSetting, ObjectiveMode};
use mess_core::{CostKind, EdgeMorphology, Estimator};

#[derive(Debug, Parser)]
#[command(name = "mess", version, about = "Multi-exit segmentation: profiling, calibration search and simulation")]
#[command(args_override_self = true)]
struct Cli {
    /// TOML file mirroring the flags; command-line flags take precedence.
    #[arg(long, global = true, value_hint = ValueHint::FilePath)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to the available cores. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Progress messages on stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Place exits on a cost profile and print per-segment costs.
    Profile(ProfileArgs),
    /// Tabulate confusion matrices and image confidences for a manifest.
    BuildCache(BuildCacheArgs),
    /// Search the configuration space for one inference setting.
    Search(SearchArgs),
    /// Replay an instance on raw predictions and write a report.
    Simulate(SimulateArgs),
    /// Evaluate a training loss on exported predictions (forward only).
    EvalLoss(EvalLossArgs),
    /// Image-level confidence of one prediction tensor.
    Confidence(ConfidenceArgs),
    /// Write deterministic synthetic calibration and test splits.
    GenFixtures(GenFixturesArgs),
}

fn serde_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown value `{s}`"))
}

fn setting(s: &str) -> Result<InferenceSetting, String> {
    serde_enum(s)
}
fn objective(s: &str) -> Result<ObjectiveMode, String> {
    serde_enum(s)
}
fn cost_kind(s: &str) -> Result<CostKind, String> {
    serde_enum(s)
}
fn estimator(s: &str) -> Result<Estimator, String> {
    serde_enum(s)
}
fn morphology(s: &str) -> Result<EdgeMorphology, String> {
    serde_enum(s)
}
fn kl_direction(s: &str) -> Result<KlDirection, String> {
    serde_enum(s)
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub costs: Option<PathBuf>,
    #[arg(long)]
    pub num_exits: Option<usize>,
    /// workload or latency
    #[arg(long, value_parser = cost_kind, default_value = "workload")]
    pub cost_kind: CostKind,
}

#[derive(Debug, Args)]
pub struct CacheOptions {
    /// Pixel-confidence thresholds to tabulate, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub th_pix_grid: Option<Vec<f64>>,
    /// top1 or entropy
    #[arg(long, value_parser = estimator, default_value = "top1")]
    pub estimator: Estimator,
    /// dilate or erode
    #[arg(long, value_parser = morphology, default_value = "dilate")]
    pub morphology: EdgeMorphology,
}

#[derive(Debug, Args)]
pub struct BuildCacheArgs {
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub cache: CacheOptions,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// final-only, budgeted, anytime or input-dep
    #[arg(long, value_parser = setting)]
    pub setting: Option<InferenceSetting>,
    /// min-cost (bound is th_acc) or max-acc (bound is th_cost)
    #[arg(long, value_parser = objective)]
    pub objective: Option<ObjectiveMode>,
    #[arg(long)]
    pub bound: Option<f64>,
    #[arg(long, value_parser = cost_kind, default_value = "workload")]
    pub cost_kind: CostKind,
    /// Calibration cache from `build-cache`.
    #[arg(long, value_hint = ValueHint::FilePath, conflicts_with = "manifest")]
    pub cache: Option<PathBuf>,
    /// Build the cache from this manifest instead of loading one.
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub cache_options: CacheOptions,
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub costs: Option<PathBuf>,
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub max_exits: usize,
    /// Image-confidence thresholds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub th_img_grid: Option<Vec<f64>>,
    /// Only consider configs without edge enhancement.
    #[arg(long)]
    pub no_edge_enhance: bool,
    /// Class left out of mIoU, e.g. the background.
    #[arg(long)]
    pub exclude_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub instance: Option<PathBuf>,
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub costs: Option<PathBuf>,
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub report: Option<PathBuf>,
    /// Leave per-image records out of the report.
    #[arg(long)]
    pub no_images: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum LossKind {
    Pretrain,
    Pfd,
}

#[derive(Debug, Args)]
pub struct EvalLossArgs {
    #[arg(long, value_enum)]
    pub loss: Option<LossKind>,
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub manifest: Option<PathBuf>,
    /// Architecture per exit, shallow first; defaults to the first listed one.
    #[arg(long, value_delimiter = ',')]
    pub archs: Option<Vec<mess_core::ExitArch>>,
    #[arg(long, default_value_t = mess_core::losses::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// 1-based batch index for the pre-training schedule.
    #[arg(long, default_value_t = 1)]
    pub batch_index: u64,
    /// One early exit per batch instead of every divisor of the batch index.
    #[arg(long)]
    pub round_robin: bool,
    /// teacher-student is KL(final || exit)
    #[arg(long, value_parser = kl_direction, default_value = "teacher-student")]
    pub kl_direction: KlDirection,
    /// Drop the final exit's own term from the distillation loss.
    #[arg(long)]
    pub exclude_final: bool,
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConfidenceArgs {
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub pred: Option<PathBuf>,
    #[arg(long, value_parser = estimator, default_value = "top1")]
    pub estimator: Estimator,
    #[arg(long)]
    pub th_pix: Option<f64>,
    #[arg(long)]
    pub edge_enhance: bool,
    /// Output stride of the exit; sets the edge neighbourhood.
    #[arg(long, default_value_t = 1)]
    pub os: usize,
    #[arg(long, value_parser = morphology, default_value = "dilate")]
    pub morphology: EdgeMorphology,
    /// Write the confidence map used for c_img as an f32 grid.
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub map_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenFixturesArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_hint = ValueHint::DirPath)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Target pixel accuracy per exit, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub ladder: Option<Vec<f64>>,
    #[arg(long)]
    pub confidence_correlation: Option<f64>,
    #[arg(long)]
    pub archs_per_exit: Option<usize>,
    #[arg(long)]
    pub easy_fraction: Option<f64>,
    #[arg(long)]
    pub output_stride: Option<u32>,
}

/// Index of the subcommand token, skipping global options and their values.
fn subcommand_position(argv: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if a == "--config" || a == "--threads" {
            i += 2;
        } else if a.starts_with('-') {
            i += 1;
        } else {
            return Some(i);
        }
    }
    None
}

fn parse(argv: Vec<OsString>) -> Result<Cli, clap::Error> {
    let first = Cli::try_parse_from(&argv)?;
    let Some(file) = &first.config else {
        return Ok(first);
    };
    let cmd = Cli::command();
    let name = first.command.name();
    let extra = config::config_args(file, &cmd, name)
        .map_err(|e| cmd.clone().error(clap::error::ErrorKind::InvalidValue, format!("{e:#}")))?;
    let pos = subcommand_position(&argv).expect("a subcommand was parsed");
    let mut merged = argv[..=pos].to_vec();
    merged.extend(extra.into_iter().map(OsString::from));
    merged.extend_from_slice(&argv[pos + 1..]);
    let matches = cmd.try_get_matches_from(merged)?;
    Cli::from_arg_matches(&matches)
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Profile(_) => "profile",
            Command::BuildCache(_) => "build-cache",
            Command::Search(_) => "search",
            Command::Simulate(_) => "simulate",
            Command::EvalLoss(_) => "eval-loss",
            Command::Confidence(_) => "confidence",
            Command::GenFixtures(_) => "gen-fixtures",
        }
    }
}

fn main() -> ExitCode {
    let cli = match parse(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command, cli.verbose) {
        Ok(status) => ExitCode::from(status),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
