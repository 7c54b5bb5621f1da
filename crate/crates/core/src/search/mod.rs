//! Configuration space, calibration cache, setting-specific cost and
//! accuracy, and the exhaustive min-cost / max-accuracy solver.

mod cache;
mod cost;
mod evaluate;
mod instance;
mod solve;
mod space;

pub use cache::{build_calibration_cache, CacheSettings, CalibrationCache, CACHE_SCHEMA};
pub use cost::{cost_of, CostModel};
pub use evaluate::{evaluate_config, Evaluation, Evaluator};
pub use instance::{MessInstance, ObjectiveRecord, PredictedMetrics, INSTANCE_SCHEMA};
pub use solve::{
    default_th_img_grid, default_th_pix_grid, search, ObjectiveMode, SearchLimits,
    SearchObjective, SearchOutcome,
};
pub use space::{enumerate_space, InferenceSetting, MessConfig, SelectedExit, Skeleton, SpaceIter};

pub(crate) use evaluate::reach_rates;

use crate::arch::ExitArch;
use crate::confidence::ConfidenceError;
use crate::metrics::MetricsError;
use crate::tensorio::TensorIoError;

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("no exit point has an available architecture")]
    EmptySpace,
    #[error("config does not fit its setting: {0}")]
    ConfigSettingMismatch(String),
    #[error("input-dependent cost needs exit rates")]
    MissingExitRates,
    #[error("{got} exit rates for {expected} selected exits")]
    ExitRateLength { expected: usize, got: usize },
    #[error("exit rate {0} outside [0, 1]")]
    InvalidExitRate(f64),
    #[error("{arch} at block {block} is not in the cache")]
    UnknownArch { block: usize, arch: ExitArch },
    #[error("block {0} is not an exit point of the cache")]
    MissingExitPoint(usize),
    #[error("th_pix {0} is not on the cache grid")]
    ThresholdNotInGrid(f64),
    #[error("invalid objective: {0}")]
    InvalidObjective(String),
    #[error("invalid search limits: {0}")]
    InvalidLimits(String),
    #[error("cache file: {0}")]
    CacheFormat(String),
    #[error("no configuration satisfies {constraint}")]
    Infeasible {
        constraint: String,
        best_violating: Box<SearchOutcome>,
    },
    #[error(transparent)]
    TensorIo(#[from] TensorIoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
}

#[cfg(test)]
pub(crate) mod test_support;
