mod common;

use common::{golden_bundle, golden_input, golden_path, read_golden};
use vcm_core::motion::unet_forward;

#[test]
fn unet_matches_frozen_golden() {
    let out = unet_forward(&golden_bundle(), &golden_input()).unwrap();
    let golden = read_golden();
    assert_eq!(out.data().len(), golden.len());
    for (i, (a, b)) in out.data().iter().zip(&golden).enumerate() {
        assert!((a - b).abs() <= 1e-6, "element {i}: {a} vs {b}");
    }
}

#[test]
fn unet_forward_is_bit_reproducible() {
    let a = unet_forward(&golden_bundle(), &golden_input()).unwrap();
    let b = unet_forward(&golden_bundle(), &golden_input()).unwrap();
    assert_eq!(a, b);
}

/// Rewrites the golden tensor; run with `--ignored` only when the network
/// definition changes on purpose.
#[test]
#[ignore]
fn regenerate_golden() {
    let out = unet_forward(&golden_bundle(), &golden_input()).unwrap();
    let doc = serde_json::json!({ "shape": [3, 16, 16], "values": out.data() });
    std::fs::write(
        golden_path(),
        serde_json::to_string_pretty(&doc).unwrap() + "\n",
    )
    .unwrap();
}
