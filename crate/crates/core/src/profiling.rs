//! Candidate exit-point placement from a backbone workload profile.

use serde::{Deserialize, Serialize};

use crate::tensorio::CostProfile;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProfilingError {
    #[error("cannot place {exits} exits on {blocks} blocks")]
    TooManyExits { exits: usize, blocks: usize },
    #[error("at least one exit is required")]
    NoExits,
    #[error("exits {first} and {second} both resolve to block {block}")]
    DuplicatePlacement { first: usize, second: usize, block: usize },
}

/// Block ordinals `K_1 < … < K_N`; the last one is the final block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExitPlacement {
    exit_points: Vec<usize>,
}

impl ExitPlacement {
    /// Accepts any strictly increasing list of positive block ordinals.
    pub fn from_blocks(exit_points: Vec<usize>) -> Option<Self> {
        let ok = !exit_points.is_empty()
            && exit_points[0] >= 1
            && exit_points.windows(2).all(|w| w[0] < w[1]);
        ok.then_some(ExitPlacement { exit_points })
    }

    pub fn blocks(&self) -> &[usize] {
        &self.exit_points
    }

    pub fn len(&self) -> usize {
        self.exit_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exit_points.is_empty()
    }

    /// `K_n` for a 1-based exit index.
    pub fn block_of(&self, exit: usize) -> Option<usize> {
        exit.checked_sub(1).and_then(|i| self.exit_points.get(i).copied())
    }
}

/// Places `num_exits` exits so that exit `n` sits at the block whose
/// cumulative workload is nearest `n / N` of the total. The last exit is the
/// final block; equal distances go to the shallower block.
pub fn place_exit_points(
    profile: &CostProfile,
    num_exits: usize,
) -> Result<ExitPlacement, ProfilingError> {
    let workloads = profile.workloads();
    let blocks = workloads.len();
    if num_exits == 0 {
        return Err(ProfilingError::NoExits);
    }
    if num_exits > blocks {
        return Err(ProfilingError::TooManyExits {
            exits: num_exits,
            blocks,
        });
    }
    let cumulative: Vec<f64> = workloads
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let total = cumulative[blocks - 1];
    // Distances closer than this are treated as ties, so rescaling the
    // profile cannot flip a tie through rounding.
    let tie = total * 1e-12;

    let mut points = Vec::with_capacity(num_exits);
    for n in 1..num_exits {
        let target = total * n as f64 / num_exits as f64;
        let mut best = 0usize;
        let mut best_dist = (cumulative[0] - target).abs();
        for (k, &c) in cumulative.iter().enumerate().skip(1) {
            let d = (c - target).abs();
            if d < best_dist - tie {
                best = k;
                best_dist = d;
            }
        }
        points.push(best + 1);
    }
    points.push(blocks);

    for (i, w) in points.windows(2).enumerate() {
        if w[0] >= w[1] {
            return Err(ProfilingError::DuplicatePlacement {
                first: i + 1,
                second: i + 2,
                block: w[1],
            });
        }
    }
    Ok(ExitPlacement { exit_points: points })
}
