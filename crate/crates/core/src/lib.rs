//! Post-training toolkit for segmentation networks with early exits.
//!
//! Given per-exit predictions on a calibration split and a per-block cost
//! profile, the crate places exits, searches for the cheapest (or most
//! accurate) selection of exit heads and thresholds under one of four
//! inference settings, and replays the result on another split.

pub mod arch;
pub mod confidence;
pub mod losses;
pub mod metrics;
pub mod profiling;
pub mod search;
pub mod simulate;
pub mod tensorio;

pub use arch::{ExitArch, Head};
pub use confidence::{EdgeMorphology, Estimator, ExitThresholds};
pub use metrics::{ConfusionMatrix, MiouOptions};
pub use profiling::{place_exit_points, ExitPlacement};
pub use search::{
    CalibrationCache, InferenceSetting, MessConfig, MessInstance, SearchError, SearchLimits,
    SearchObjective,
};
pub use simulate::{gen_synthetic_fixtures, simulate, FixtureSpec, SimulationReport};
pub use tensorio::{CostKind, CostProfile, DatasetManifest, LabelMap, PredictionSource, PredictionTensor};
