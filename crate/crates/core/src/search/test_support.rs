use crate::arch::ExitArch;
use crate::simulate::{gen_synthetic_fixtures, FixtureSet, FixtureSpec};
use crate::tensorio::{CostProfile, LabelMap, MemoryImage, MemorySource, PredictionTensor};

pub fn arch(code: &str) -> ExitArch {
    code.parse().unwrap()
}

/// Two-class `1 × len` prediction: `top[p]` on class `labels[p]`.
pub fn pred(labels: &[u16], top: &[f32]) -> PredictionTensor {
    let n = labels.len();
    let mut data = vec![0f32; 2 * n];
    for p in 0..n {
        let l = labels[p] as usize;
        data[l * n + p] = top[p];
        data[(1 - l) * n + p] = 1.0 - top[p];
    }
    PredictionTensor::new(2, 1, n, data).unwrap()
}

/// Three images of ten pixels on blocks 1 and 2. At block 1 the images have
/// 9, 5 and 2 pixels with confidence 0.95 (the rest 0.6); block 2 is
/// always confident. Exit 1 mislabels the unconfident pixels.
pub fn hand_walk_source() -> (MemorySource, CostProfile) {
    let a = arch("c0b0r0h0");
    let gt = vec![0u16; 10];
    let images = [9usize, 5, 2]
        .iter()
        .enumerate()
        .map(|(i, &confident)| {
            let top: Vec<f32> = (0..10).map(|p| if p < confident { 0.95 } else { 0.6 }).collect();
            let early: Vec<u16> = (0..10).map(|p| u16::from(p >= confident)).collect();
            MemoryImage {
                image_id: format!("img-{i}"),
                labels: LabelMap::new(1, 10, gt.clone()).unwrap(),
                predictions: vec![(1, a, pred(&early, &top)), (2, a, pred(&gt, &[0.99; 10]))],
            }
        })
        .collect();
    let source = MemorySource {
        class_count: 2,
        background_class: 0,
        exits: vec![(1, 1), (2, 1)],
        images,
    };
    let profile = CostProfile::from_workloads(&[40.0, 60.0])
        .with_head(1, a, 5.0)
        .with_head(2, a, 10.0);
    (source, profile)
}

pub fn small_fixtures(seed: u64) -> FixtureSet {
    gen_synthetic_fixtures(&FixtureSpec {
        seed,
        images: 24,
        rows: 16,
        cols: 16,
        ..FixtureSpec::default()
    })
    .unwrap()
}
