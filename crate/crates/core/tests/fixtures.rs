use std::fs;
use std::path::Path;

use mess_core::search::{
    build_calibration_cache, search, CacheSettings, InferenceSetting, MessInstance, SearchLimits, SearchObjective,
};
use mess_core::simulate::{gen_synthetic_fixtures, simulate, FixtureSpec};
use mess_core::metrics::miou;
use mess_core::{CostKind, EdgeMorphology, Estimator};

fn small(seed: u64) -> FixtureSpec {
    FixtureSpec {
        seed,
        images: 24,
        rows: 16,
        cols: 16,
        ..FixtureSpec::default()
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_seed_writes_byte_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen_synthetic_fixtures(&small(9)).unwrap().write_to(a.path()).unwrap();
    gen_synthetic_fixtures(&small(9)).unwrap().write_to(b.path()).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(fa.len() > 10);
    assert_eq!(fa, fb);

    let c = tempfile::tempdir().unwrap();
    gen_synthetic_fixtures(&small(10)).unwrap().write_to(c.path()).unwrap();
    assert_ne!(fa, files(c.path()));
}

#[test]
fn uncorrelated_confidence_degenerates_to_a_fixed_exit() {
    for seed in 0..3 {
        let set = gen_synthetic_fixtures(&FixtureSpec {
            confidence_correlation: 0.0,
            ..small(seed)
        })
        .unwrap();
        let cache = build_calibration_cache(&set.calib, &CacheSettings::default()).unwrap();
        let limits = SearchLimits {
            edge_options: vec![false],
            ..SearchLimits::default()
        };
        // A bound between the first and the final exit makes partial early
        // exiting attractive if confidence carried any signal.
        let blocks = cache.exit_blocks().to_vec();
        let miou_at = |i: usize| {
            let arch = cache.archs()[i][0];
            miou(cache.dataset_confusion(blocks[i], arch).unwrap()).unwrap()
        };
        let bound = 0.5 * (miou_at(0) + miou_at(blocks.len() - 1));
        let objective = SearchObjective::min_cost(bound, CostKind::Workload);
        let outcome = search(&objective, &cache, &set.profile, InferenceSetting::InputDependent, &limits).unwrap();
        let instance = MessInstance::from_outcome(&outcome, Estimator::Top1, EdgeMorphology::Dilate, None);
        let report = simulate(&instance, &set.test, &set.profile).unwrap();
        let used = report.exit_counts.iter().filter(|&&c| c > 0).count();
        assert_eq!(used, 1, "seed {seed}: exit counts {:?}", report.exit_counts);
    }
}
