//! Shared setup for the criterion benches.

use mess_core::search::{build_calibration_cache, CacheSettings, CalibrationCache};
use mess_core::simulate::{gen_synthetic_fixtures, FixtureSet, FixtureSpec};

/// Default fixture shape with `images` images over both splits, and the
/// calibration cache of its first half.
pub fn fixtures(images: usize) -> (FixtureSet, CalibrationCache) {
    let set = gen_synthetic_fixtures(&FixtureSpec {
        seed: 11,
        images,
        ..FixtureSpec::default()
    })
    .expect("default fixture spec is valid");
    let cache = build_calibration_cache(&set.calib, &CacheSettings::default()).expect("fixtures are consistent");
    (set, cache)
}
