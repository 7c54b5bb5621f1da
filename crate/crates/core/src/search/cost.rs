//! Setting-specific cost of a MESS instance.
//!
//! | setting         | cost                                                   |
//! |-----------------|--------------------------------------------------------|
//! | final-only      | `cost(b_{1:K_N}) + head_N`                             |
//! | budgeted        | `cost(b_{1:K_n}) + head_n`                             |
//! | anytime         | `cost(b_{1:K_N}) + Σ_n head_n`                         |
//! | input-dependent | `Σ_n p_{n−1} · (cost(b_{K_{n−1}:K_n}) + head_n)`       |
//!
//! Unselected exit points are skipped, so `K_{n−1}` is the previous
//! *selected* exit. `p` is the fraction of images reaching each selected exit
//! (the first is always 1).

use super::space::{InferenceSetting, MessConfig};
use super::SearchError;
use crate::arch::ExitArch;
use crate::tensorio::{CostKind, CostProfile};

/// Backbone segments and heads of the selected exits, shallow first.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SelectedCosts {
    /// `cost(b_{K_prev:K_n})` per selected exit.
    pub segments: Vec<f64>,
    pub heads: Vec<f64>,
    /// `cost(b_{1:K_deepest})`.
    pub full_backbone: f64,
}

/// Applies the table row for `setting`. `reach` is required for
/// input-dependent inference only.
pub(crate) fn combine_cost(
    setting: InferenceSetting,
    costs: &SelectedCosts,
    reach: Option<&[f64]>,
) -> Result<f64, SearchError> {
    match setting {
        InferenceSetting::FinalOnly | InferenceSetting::Budgeted => {
            Ok(costs.full_backbone + costs.heads[0])
        }
        InferenceSetting::Anytime => Ok(costs.heads.iter().fold(costs.full_backbone, |acc, h| acc + h)),
        InferenceSetting::InputDependent => {
            let reach = reach.ok_or(SearchError::MissingExitRates)?;
            if reach.len() != costs.heads.len() {
                return Err(SearchError::ExitRateLength {
                    expected: costs.heads.len(),
                    got: reach.len(),
                });
            }
            Ok(reach
                .iter()
                .zip(costs.segments.iter().zip(&costs.heads))
                .fold(0.0, |acc, (p, (s, h))| acc + p * (s + h)))
        }
    }
}

/// Cost of `config` against `profile`. `exit_rates` holds the reach rate of
/// each selected exit in depth order and is only used for input-dependent
/// inference.
pub fn cost_of(
    config: &MessConfig,
    profile: &CostProfile,
    exit_rates: Option<&[f64]>,
    kind: CostKind,
) -> Result<f64, SearchError> {
    config.validate()?;
    if let Some(rates) = exit_rates {
        if let Some(bad) = rates.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(SearchError::InvalidExitRate(*bad));
        }
    }
    let mut prev = 0;
    let mut costs = SelectedCosts {
        segments: Vec::new(),
        heads: Vec::new(),
        full_backbone: 0.0,
    };
    for (_, block, exit) in config.selected() {
        costs.segments.push(profile.segment_cost(prev, block, kind)?);
        costs.heads.push(profile.head_cost(block, exit.arch, kind)?);
        prev = block;
    }
    costs.full_backbone = profile.segment_cost(0, prev, kind)?;
    combine_cost(config.setting, &costs, exit_rates)
}

/// Segment and head costs for every exit point and arch of a search, looked
/// up once from the profile.
#[derive(Debug, Clone)]
pub struct CostModel {
    kind: CostKind,
    exit_blocks: Vec<usize>,
    /// `segment[a][b]`: cost between point `a−1` (0 = input) and point `b`.
    segment: Vec<Vec<f64>>,
    /// `full[b]`: cost from the input to point `b`.
    full: Vec<f64>,
    /// Head cost per point, aligned with the arch list given at build time.
    heads: Vec<Vec<f64>>,
}

impl CostModel {
    pub fn new(
        profile: &CostProfile,
        exit_blocks: &[usize],
        archs: &[Vec<ExitArch>],
        kind: CostKind,
    ) -> Result<Self, SearchError> {
        let n = exit_blocks.len();
        let starts: Vec<usize> = std::iter::once(0).chain(exit_blocks.iter().copied()).collect();
        let mut segment = vec![vec![0.0; n]; n + 1];
        for (a, &from) in starts.iter().enumerate().take(n) {
            for (b, &to) in exit_blocks.iter().enumerate().skip(a) {
                segment[a][b] = profile.segment_cost(from, to, kind)?;
            }
        }
        let full = exit_blocks
            .iter()
            .map(|&b| profile.segment_cost(0, b, kind))
            .collect::<Result<Vec<_>, _>>()?;
        let heads = exit_blocks
            .iter()
            .zip(archs)
            .map(|(&b, list)| {
                list.iter()
                    .map(|&a| profile.head_cost(b, a, kind))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CostModel {
            kind,
            exit_blocks: exit_blocks.to_vec(),
            segment,
            full,
            heads,
        })
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn exit_blocks(&self) -> &[usize] {
        &self.exit_blocks
    }

    /// Costs for selected `(point, arch position)` pairs in depth order.
    pub(crate) fn selected(&self, exits: impl Iterator<Item = (usize, usize)>) -> SelectedCosts {
        let mut prev: Option<usize> = None;
        let mut costs = SelectedCosts {
            segments: Vec::new(),
            heads: Vec::new(),
            full_backbone: 0.0,
        };
        for (point, arch_pos) in exits {
            let from = prev.map_or(0, |p| p + 1);
            costs.segments.push(self.segment[from][point]);
            costs.heads.push(self.heads[point][arch_pos]);
            prev = Some(point);
        }
        costs.full_backbone = prev.map_or(0.0, |p| self.full[p]);
        costs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::ExitThresholds;
    use crate::search::space::SelectedExit;

    fn arch(code: &str) -> ExitArch {
        code.parse().unwrap()
    }

    fn config(setting: InferenceSetting, blocks: Vec<usize>, picks: &[Option<&str>]) -> MessConfig {
        MessConfig {
            setting,
            exit_blocks: blocks,
            exits: picks
                .iter()
                .map(|p| {
                    p.map(|c| SelectedExit {
                        arch: arch(c),
                        thresholds: ExitThresholds::default(),
                    })
                })
                .collect(),
        }
    }

    #[test]
    fn anytime_adds_one_head_to_final_only() {
        // Backbone 136.63 + final head 2.0 = 138.63; early head 0.69.
        let profile = CostProfile::from_workloads(&[38.63, 98.0])
            .with_head(1, arch("c3b0r0h0"), 0.69)
            .with_head(2, arch("c0b0r0h1"), 2.0);
        let w = CostKind::Workload;
        let fo = config(InferenceSetting::FinalOnly, vec![1, 2], &[None, Some("c0b0r0h1")]);
        let final_only = cost_of(&fo, &profile, None, w).unwrap();
        assert!((final_only - 138.63).abs() < 1e-9);
        let any = config(
            InferenceSetting::Anytime,
            vec![1, 2],
            &[Some("c3b0r0h0"), Some("c0b0r0h1")],
        );
        let anytime = cost_of(&any, &profile, None, w).unwrap();
        assert!((anytime - 139.32).abs() < 0.01);
        assert!((anytime - 139.33).abs() <= 0.01 + 1e-9);
    }

    #[test]
    fn input_dependent_formula() {
        let profile = CostProfile::from_workloads(&[40.0, 60.0])
            .with_head(1, arch("c0b0r0h0"), 5.0)
            .with_head(2, arch("c0b0r0h0"), 10.0);
        let c = config(
            InferenceSetting::InputDependent,
            vec![1, 2],
            &[Some("c0b0r0h0"), Some("c0b0r0h0")],
        );
        let w = CostKind::Workload;
        assert_eq!(cost_of(&c, &profile, Some(&[1.0, 0.4]), w).unwrap(), 73.0);
        assert!(matches!(
            cost_of(&c, &profile, None, w),
            Err(SearchError::MissingExitRates)
        ));
        assert!(matches!(
            cost_of(&c, &profile, Some(&[1.0]), w),
            Err(SearchError::ExitRateLength { .. })
        ));
        // Nothing propagates past the first exit: budgeted cost of exit 1.
        let collapsed = cost_of(&c, &profile, Some(&[1.0, 0.0]), w).unwrap();
        let mut b = c.clone();
        b.setting = InferenceSetting::Budgeted;
        b.exits[1] = None;
        assert_eq!(collapsed, cost_of(&b, &profile, None, w).unwrap());
    }

    #[test]
    fn skipped_points_merge_segments() {
        let profile = CostProfile::from_workloads(&[10.0, 20.0, 30.0])
            .with_head(1, arch("c0b0r0h0"), 1.0)
            .with_head(3, arch("c0b0r0h0"), 3.0);
        let c = config(
            InferenceSetting::InputDependent,
            vec![1, 2, 3],
            &[Some("c0b0r0h0"), None, Some("c0b0r0h0")],
        );
        let v = cost_of(&c, &profile, Some(&[1.0, 0.5]), CostKind::Workload).unwrap();
        assert_eq!(v, 11.0 + 0.5 * 53.0);
    }

    #[test]
    fn setting_mismatch() {
        let profile = CostProfile::from_workloads(&[1.0, 1.0]).with_head(1, arch("c0b0r0h0"), 1.0);
        let c = config(InferenceSetting::FinalOnly, vec![1, 2], &[Some("c0b0r0h0"), None]);
        assert!(matches!(
            cost_of(&c, &profile, None, CostKind::Workload),
            Err(SearchError::ConfigSettingMismatch(_))
        ));
    }

    #[test]
    fn model_matches_direct_lookup() {
        let a = arch("c0b0r0h0");
        let b = arch("c1b1r1h1");
        let profile = CostProfile::from_workloads(&[3.0, 5.0, 7.0, 11.0])
            .with_head(2, a, 0.5)
            .with_head(2, b, 0.75)
            .with_head(4, a, 1.25);
        let model = CostModel::new(&profile, &[2, 4], &[vec![a, b], vec![a]], CostKind::Workload).unwrap();
        let sel = model.selected([(0, 1), (1, 0)].into_iter());
        let c = config(InferenceSetting::Anytime, vec![2, 4], &[Some("c1b1r1h1"), Some("c0b0r0h0")]);
        assert_eq!(
            combine_cost(InferenceSetting::Anytime, &sel, None).unwrap(),
            cost_of(&c, &profile, None, CostKind::Workload).unwrap()
        );
        assert_eq!(sel.segments, vec![8.0, 18.0]);
        assert_eq!(sel.full_backbone, 26.0);
    }
}
