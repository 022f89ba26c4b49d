#![allow(dead_code)]

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vcm_core::motion::{FeatureMap, ToyUNetSpec, WeightBundle};

pub const GOLDEN_SEED: u64 = 42;

pub fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/unet_seed42_golden.json")
}

/// Depth-2, base-8, 3 → 3 channel U-Net with seed-42 weights.
pub fn golden_bundle() -> WeightBundle {
    let mut bundle = WeightBundle::new();
    bundle.add_toy_unet(
        "",
        ToyUNetSpec::default(),
        &mut ChaCha8Rng::seed_from_u64(GOLDEN_SEED),
    );
    bundle
}

pub fn golden_input() -> FeatureMap {
    let data = (0..3 * 16 * 16)
        .map(|i| {
            let (c, y, x) = (i / 256, (i / 16) % 16, i % 16);
            ((c * 7 + y * 3 + x * 5) % 17) as f64 / 16.0 - 0.25
        })
        .collect();
    FeatureMap::new(3, 16, 16, data).unwrap()
}

pub fn read_golden() -> Vec<f64> {
    let text = std::fs::read_to_string(golden_path()).expect("golden tensor file");
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["shape"], serde_json::json!([3, 16, 16]));
    v["values"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}
