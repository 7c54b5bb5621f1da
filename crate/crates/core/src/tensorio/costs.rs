//! `costs.json`: per-block backbone cost and per-(block, arch) head overhead.
//!
//! ```json
//! {
//!   "schema": "mess.costs/v1",
//!   "blocks": [{ "gflops": 10.0, "latency_ms": 1.2 }],
//!   "exit_overheads": [{ "block": 4, "arch": "c3b0r0h0", "gflops": 0.69 }]
//! }
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TensorIoError;
use crate::arch::ExitArch;

pub const COSTS_SCHEMA: &str = "mess.costs/v1";

fn costs_schema() -> String {
    COSTS_SCHEMA.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    #[default]
    Workload,
    Latency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockCost {
    pub gflops: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

impl BlockCost {
    fn get(&self, kind: CostKind) -> Option<f64> {
        match kind {
            CostKind::Workload => Some(self.gflops),
            CostKind::Latency => self.latency_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitOverhead {
    pub block: usize,
    pub arch: ExitArch,
    pub gflops: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostProfile {
    #[serde(default = "costs_schema")]
    pub schema: String,
    pub blocks: Vec<BlockCost>,
    #[serde(default)]
    pub exit_overheads: Vec<ExitOverhead>,
}

impl CostProfile {
    pub fn new(blocks: Vec<BlockCost>, exit_overheads: Vec<ExitOverhead>) -> Self {
        CostProfile {
            schema: costs_schema(),
            blocks,
            exit_overheads,
        }
    }

    /// Workload-only profile from plain GFLOP figures.
    pub fn from_workloads(blocks: &[f64]) -> Self {
        Self::new(
            blocks
                .iter()
                .map(|&gflops| BlockCost {
                    gflops,
                    latency_ms: None,
                })
                .collect(),
            Vec::new(),
        )
    }

    pub fn with_head(mut self, block: usize, arch: ExitArch, gflops: f64) -> Self {
        self.exit_overheads.push(ExitOverhead {
            block,
            arch,
            gflops,
            latency_ms: None,
        });
        self
    }

    pub fn validate(&self) -> Result<(), TensorIoError> {
        if self.blocks.is_empty() {
            return Err(TensorIoError::EmptyProfile);
        }
        let check = |what: String, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(TensorIoError::NonPositiveCost { what, value: v })
            }
        };
        for (i, b) in self.blocks.iter().enumerate() {
            check(format!("block {}", i + 1), b.gflops)?;
            if let Some(l) = b.latency_ms {
                check(format!("block {} latency", i + 1), l)?;
            }
        }
        for h in &self.exit_overheads {
            if h.block == 0 || h.block > self.blocks.len() {
                return Err(TensorIoError::BlockRange {
                    from: h.block,
                    to: h.block,
                    blocks: self.blocks.len(),
                });
            }
            check(format!("head {} at block {}", h.arch, h.block), h.gflops)?;
            if let Some(l) = h.latency_ms {
                check(format!("head {} at block {} latency", h.arch, h.block), l)?;
            }
        }
        Ok(())
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn workloads(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.gflops).collect()
    }

    /// `cost(b_{from:to})`: summed cost of blocks `from+1 ..= to` (1-based).
    pub fn segment_cost(&self, from: usize, to: usize, kind: CostKind) -> Result<f64, TensorIoError> {
        if from > to || to > self.blocks.len() {
            return Err(TensorIoError::BlockRange {
                from,
                to,
                blocks: self.blocks.len(),
            });
        }
        self.blocks[from..to]
            .iter()
            .enumerate()
            .try_fold(0.0, |acc, (i, b)| {
                b.get(kind)
                    .map(|v| acc + v)
                    .ok_or_else(|| TensorIoError::MissingLatency(format!("block {}", from + i + 1)))
            })
    }

    /// Overhead of attaching `arch` at `block`.
    pub fn head_cost(&self, block: usize, arch: ExitArch, kind: CostKind) -> Result<f64, TensorIoError> {
        let h = self
            .exit_overheads
            .iter()
            .find(|h| h.block == block && h.arch == arch)
            .ok_or(TensorIoError::MissingHeadCost { block, arch })?;
        match kind {
            CostKind::Workload => Ok(h.gflops),
            CostKind::Latency => h
                .latency_ms
                .ok_or_else(|| TensorIoError::MissingLatency(format!("head {arch} at block {block}"))),
        }
    }

    pub fn has_latency(&self) -> bool {
        self.blocks.iter().all(|b| b.latency_ms.is_some())
            && self.exit_overheads.iter().all(|h| h.latency_ms.is_some())
    }

    pub fn save(&self, path: &Path) -> Result<(), TensorIoError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let text = serde_json::to_string_pretty(self).map_err(|e| TensorIoError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

pub fn load_cost_profile(path: &Path) -> Result<CostProfile, TensorIoError> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => TensorIoError::MissingFile(path.to_path_buf()),
        _ => TensorIoError::Io(e),
    })?;
    let profile: CostProfile = serde_json::from_str(&text).map_err(|e| TensorIoError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    profile.validate()?;
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn segment_sums() {
        let p = CostProfile::from_workloads(&[10.0, 20.0, 30.0]);
        assert_eq!(p.segment_cost(0, 2, CostKind::Workload).unwrap(), 30.0);
        assert_eq!(p.segment_cost(2, 3, CostKind::Workload).unwrap(), 30.0);
        assert_eq!(p.segment_cost(1, 1, CostKind::Workload).unwrap(), 0.0);
        assert!(p.segment_cost(2, 4, CostKind::Workload).is_err());
        assert!(matches!(
            p.segment_cost(0, 1, CostKind::Latency),
            Err(TensorIoError::MissingLatency(_))
        ));
    }

    #[test]
    fn rejects_negative_block_cost() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("costs.json");
        fs::write(&path, r#"{"blocks":[{"gflops":10},{"gflops":-1}]}"#).unwrap();
        assert!(matches!(
            load_cost_profile(&path),
            Err(TensorIoError::NonPositiveCost { .. })
        ));
        fs::write(&path, r#"{"blocks":[]}"#).unwrap();
        assert!(matches!(load_cost_profile(&path), Err(TensorIoError::EmptyProfile)));
    }

    #[test]
    fn json_round_trip() {
        let a: ExitArch = "c1b0r0h1".parse().unwrap();
        let mut p = CostProfile::from_workloads(&[1.5, 2.25]).with_head(2, a, 0.69);
        p.blocks[0].latency_ms = Some(0.3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("costs.json");
        p.save(&path).unwrap();
        let back = load_cost_profile(&path).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.head_cost(2, a, CostKind::Workload).unwrap(), 0.69);
        assert!(back.head_cost(1, a, CostKind::Workload).is_err());
        assert!(!back.has_latency());
    }

    proptest! {
        #[test]
        fn segment_cost_is_additive(
            blocks in proptest::collection::vec(0.01f64..100.0, 1..20),
            a in 0usize..20, b in 0usize..20, c in 0usize..20,
        ) {
            let n = blocks.len();
            let mut idx = [a % (n + 1), b % (n + 1), c % (n + 1)];
            idx.sort();
            let [i, j, k] = idx;
            let p = CostProfile::from_workloads(&blocks);
            let w = CostKind::Workload;
            let lhs = p.segment_cost(i, j, w).unwrap() + p.segment_cost(j, k, w).unwrap();
            let rhs = p.segment_cost(i, k, w).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1.0));
        }
    }
}
