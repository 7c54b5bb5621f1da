//! Configuration space: one architecture or `None` per exit point.

use serde::{Deserialize, Serialize};

use super::SearchError;
use crate::arch::ExitArch;
use crate::confidence::ExitThresholds;
use crate::profiling::ExitPlacement;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceSetting {
    FinalOnly,
    Budgeted,
    Anytime,
    #[serde(alias = "input-dep")]
    InputDependent,
}

impl InferenceSetting {
    pub const ALL: [InferenceSetting; 4] = [
        InferenceSetting::FinalOnly,
        InferenceSetting::Budgeted,
        InferenceSetting::Anytime,
        InferenceSetting::InputDependent,
    ];

    /// Whether a selection pattern (one flag per exit point, depth order) is
    /// admissible for this setting.
    pub fn admits(self, selected: &[bool]) -> bool {
        let count = selected.iter().filter(|s| **s).count();
        let last = selected.last().copied().unwrap_or(false);
        match self {
            InferenceSetting::FinalOnly => count == 1 && last,
            InferenceSetting::Budgeted => count == 1,
            InferenceSetting::Anytime => count >= 1 && last,
            InferenceSetting::InputDependent => count >= 1,
        }
    }
}

/// Arch choice per exit point, `None` where no exit is attached.
pub type Skeleton = Vec<Option<ExitArch>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedExit {
    pub arch: ExitArch,
    pub thresholds: ExitThresholds,
}

/// A MESS instance: the exits kept from the overprovisioned network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessConfig {
    pub setting: InferenceSetting,
    /// Block ordinal of every candidate exit point.
    pub exit_blocks: Vec<usize>,
    /// One entry per candidate exit point.
    pub exits: Vec<Option<SelectedExit>>,
}

impl MessConfig {
    /// Config with default (zero) thresholds on every selected exit.
    pub fn from_skeleton(setting: InferenceSetting, exit_blocks: Vec<usize>, skeleton: &[Option<ExitArch>]) -> Self {
        MessConfig {
            setting,
            exit_blocks,
            exits: skeleton
                .iter()
                .map(|a| {
                    a.map(|arch| SelectedExit {
                        arch,
                        thresholds: ExitThresholds::default(),
                    })
                })
                .collect(),
        }
    }

    /// `(point index, block, exit)` for every selected exit, shallow first.
    pub fn selected(&self) -> impl Iterator<Item = (usize, usize, &SelectedExit)> + '_ {
        self.exits
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.as_ref().map(|e| (i, self.exit_blocks[i], e)))
    }

    pub fn num_selected(&self) -> usize {
        self.exits.iter().filter(|e| e.is_some()).count()
    }

    pub fn skeleton(&self) -> Skeleton {
        self.exits.iter().map(|e| e.map(|e| e.arch)).collect()
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.exits.len() != self.exit_blocks.len() {
            return Err(SearchError::ConfigSettingMismatch(format!(
                "{} exit slots for {} exit points",
                self.exits.len(),
                self.exit_blocks.len()
            )));
        }
        let pattern: Vec<bool> = self.exits.iter().map(Option::is_some).collect();
        if !self.setting.admits(&pattern) {
            return Err(SearchError::ConfigSettingMismatch(format!(
                "{:?} does not admit selection {:?}",
                self.setting, pattern
            )));
        }
        Ok(())
    }
}

/// Iterator over every skeleton except all-`None`.
///
/// Order is a mixed-radix count with the deepest point as the fastest digit;
/// digit 0 is `None`, digit `k` the `k`-th available arch.
#[derive(Debug, Clone)]
pub struct SpaceIter {
    availability: Vec<Vec<ExitArch>>,
    digits: Vec<usize>,
    done: bool,
}

impl SpaceIter {
    /// Number of skeletons, `Π (|S_n| + 1) − 1`.
    pub fn size(&self) -> u128 {
        self.availability
            .iter()
            .map(|a| a.len() as u128 + 1)
            .product::<u128>()
            - 1
    }

    fn advance(&mut self) -> bool {
        for i in (0..self.digits.len()).rev() {
            if self.digits[i] < self.availability[i].len() {
                self.digits[i] += 1;
                return true;
            }
            self.digits[i] = 0;
        }
        false
    }
}

impl Iterator for SpaceIter {
    type Item = Skeleton;

    fn next(&mut self) -> Option<Skeleton> {
        if self.done || !self.advance() {
            self.done = true;
            return None;
        }
        Some(
            self.digits
                .iter()
                .zip(&self.availability)
                .map(|(&d, a)| d.checked_sub(1).map(|k| a[k]))
                .collect(),
        )
    }
}

pub fn enumerate_space(
    placement: &ExitPlacement,
    availability: &[Vec<ExitArch>],
) -> Result<SpaceIter, SearchError> {
    if availability.len() != placement.len() {
        return Err(SearchError::ConfigSettingMismatch(format!(
            "availability lists {} points, placement has {}",
            availability.len(),
            placement.len()
        )));
    }
    if availability.iter().all(Vec::is_empty) {
        return Err(SearchError::EmptySpace);
    }
    Ok(SpaceIter {
        availability: availability.to_vec(),
        digits: vec![0; availability.len()],
        done: false,
    })
}
