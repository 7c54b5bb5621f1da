//! `instance.json`: a searched configuration together with everything needed
//! to replay it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::solve::{SearchObjective, SearchOutcome};
use super::space::MessConfig;
use super::SearchError;
use crate::confidence::{EdgeMorphology, Estimator};
use crate::tensorio::TensorIoError;

pub const INSTANCE_SCHEMA: &str = "mess.instance/v1";

fn instance_schema() -> String {
    INSTANCE_SCHEMA.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveRecord {
    #[serde(flatten)]
    pub objective: SearchObjective,
    /// Constraint the instance was searched under, e.g. `accuracy >= 0.5`.
    pub constraint: String,
    pub feasible: bool,
}

/// Calibration-split figures predicted at search time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedMetrics {
    pub accuracy: f64,
    pub cost: f64,
    pub exit_rates: Vec<f64>,
    pub checkpoint_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessInstance {
    #[serde(default = "instance_schema")]
    pub schema: String,
    pub config: MessConfig,
    pub estimator: Estimator,
    #[serde(default)]
    pub morphology: EdgeMorphology,
    /// Class left out of mIoU, if any.
    #[serde(default)]
    pub exclude_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<PredictedMetrics>,
}

impl MessInstance {
    /// An instance without search metadata, e.g. for hand-written configs.
    pub fn new(config: MessConfig, estimator: Estimator, morphology: EdgeMorphology) -> Self {
        MessInstance {
            schema: instance_schema(),
            config,
            estimator,
            morphology,
            exclude_class: None,
            objective: None,
            predicted: None,
        }
    }

    pub fn from_outcome(
        outcome: &SearchOutcome,
        estimator: Estimator,
        morphology: EdgeMorphology,
        exclude_class: Option<usize>,
    ) -> Self {
        let e = &outcome.evaluation;
        MessInstance {
            schema: instance_schema(),
            config: outcome.config.clone(),
            estimator,
            morphology,
            exclude_class,
            objective: Some(ObjectiveRecord {
                objective: outcome.objective,
                constraint: outcome.objective.constraint(),
                feasible: outcome.feasible,
            }),
            predicted: Some(PredictedMetrics {
                accuracy: e.accuracy,
                cost: e.cost,
                exit_rates: e.exit_rates.clone(),
                checkpoint_accuracy: e.checkpoint_accuracy.clone(),
            }),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), SearchError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(TensorIoError::from)?;
        }
        let text = serde_json::to_string_pretty(self).expect("instance serialises");
        fs::write(path, text + "\n").map_err(TensorIoError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SearchError> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => TensorIoError::MissingFile(path.to_path_buf()),
            _ => TensorIoError::Io(e),
        })?;
        let inst: MessInstance = serde_json::from_str(&text).map_err(|e| TensorIoError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if inst.schema != INSTANCE_SCHEMA {
            return Err(TensorIoError::Parse {
                path: path.to_path_buf(),
                message: format!("schema {:?}, expected {INSTANCE_SCHEMA:?}", inst.schema),
            }
            .into());
        }
        inst.config.validate()?;
        Ok(inst)
    }
}
