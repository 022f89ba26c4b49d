use std::path::Path;
use std::process::{Command, Output};

fn vcm(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vcm"));
    cmd.args(args).env_remove("VCM_KEYFRAME_CODEC");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn vcm")
}

fn ok(args: &[&str]) -> Output {
    let out = vcm(args, &[]);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_encode_decode_eval() {
    let dir = tempfile::tempdir().unwrap();
    let clip = dir.path().join("clip");
    let weights = dir.path().join("toy.vcmw");
    ok(&[
        "synth",
        "--out",
        s(&clip),
        "--frames",
        "12",
        "--velocity",
        "1,0.5",
        "--write-weights",
        s(&weights),
    ]);
    assert!(clip.join("frame_011.pgm").exists() && clip.join("keypoints.vcmf").exists());

    let manifest = clip.join("manifest.json");
    let container = dir.path().join("clip.vcmc");
    ok(&[
        "encode",
        s(&manifest),
        "--out",
        s(&container),
        "--points",
        "16",
    ]);
    assert_eq!(&std::fs::read(&container).unwrap()[..4], b"VCMC");

    let out_dir = dir.path().join("decoded");
    ok(&["decode", s(&container), "--out", s(&out_dir)]);
    assert_eq!(std::fs::read_dir(&out_dir).unwrap().count(), 12);
    assert_eq!(
        std::fs::read(out_dir.join("frame_000.pgm")).unwrap(),
        std::fs::read(clip.join("frame_000.pgm")).unwrap()
    );

    let report = ok(&["eval", s(&container), s(&manifest)]);
    let v: serde_json::Value = serde_json::from_slice(&report.stdout).unwrap();
    assert!(v["mean_ssim"].as_f64().unwrap() >= 0.9);
    assert_eq!(v["per_frame_ssim"].as_array().unwrap().len(), 12);
    let total = v["total_kbps"].as_f64().unwrap();
    let sum = v["feature_kbps"].as_f64().unwrap() + v["video_kbps"].as_f64().unwrap();
    assert!((total - sum).abs() <= 1e-12);
    assert_eq!(v["config"]["synthesis"], "analytic");

    let learned = ok(&[
        "eval",
        s(&container),
        s(&manifest),
        "--backend",
        s(&weights),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&learned.stdout).unwrap();
    assert_eq!(v["config"]["synthesis"], "learned");
    ok(&[
        "decode",
        s(&container),
        "--out",
        s(&out_dir),
        "--backend",
        "learned",
        "--weights",
        s(&weights),
    ]);
}

#[test]
fn features_decode_without_key_frame_layer() {
    let dir = tempfile::tempdir().unwrap();
    let clip = dir.path().join("clip");
    ok(&[
        "synth",
        "--out",
        s(&clip),
        "--frames",
        "6",
        "--shape",
        "rect",
        "--points",
        "8",
    ]);
    let container = dir.path().join("c.vcmc");
    ok(&[
        "encode",
        s(&clip.join("manifest.json")),
        "--out",
        s(&container),
    ]);
    let full = ok(&["decode-features", s(&container)]).stdout;

    let bytes = std::fs::read(&container).unwrap();
    let layer0 = u64::from_le_bytes(bytes[15..23].try_into().unwrap()) as usize;
    let stripped = dir.path().join("stripped.vcmc");
    std::fs::write(&stripped, &bytes[..14 + 9 + layer0]).unwrap();
    let part = ok(&["decode-features", s(&stripped)]).stdout;
    assert_eq!(full, part);
    let v: serde_json::Value = serde_json::from_slice(&part).unwrap();
    assert_eq!(v["frames"], 6);
    assert_eq!(v["points"], 8);

    let err = vcm(
        &["decode", s(&stripped), "--out", s(&dir.path().join("x"))],
        &[],
    );
    assert_eq!(err.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&err.stderr);
    assert!(
        msg.starts_with("error[E_DECODE]:") && msg.contains("key-frame layer"),
        "{msg}"
    );
}

#[test]
fn errors_are_coded_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.vcmc");
    std::fs::write(&junk, b"not a container").unwrap();
    let out = vcm(&["decode-features", s(&junk)], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[E_CORRUPT_STREAM]:"));

    let out = vcm(
        &[
            "synth",
            "--out",
            s(&dir.path().join("c")),
            "--velocity",
            "5,0",
            "--frames",
            "32",
        ],
        &[],
    );
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[E_INVALID_SPEC]:"));

    let missing = vcm(&["decode-features", s(&dir.path().join("nope"))], &[]);
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error[E_IO]:"));
}

#[test]
fn keyframe_codec_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let clip = dir.path().join("clip");
    ok(&["synth", "--out", s(&clip), "--frames", "3"]);
    let container = dir.path().join("c.vcmc");
    let manifest = clip.join("manifest.json");
    let out = vcm(
        &["encode", s(&manifest), "--out", s(&container)],
        &[("VCM_KEYFRAME_CODEC", "cp {input} {output} # {mode}")],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = ok(&["eval", s(&container), s(&manifest)]);
    let v: serde_json::Value = serde_json::from_slice(&report.stdout).unwrap();
    assert_eq!(v["config"]["keyframe_codec"], "external");
    assert!(v["mean_ssim"].as_f64().unwrap() >= 0.9);

    let fail = vcm(
        &["encode", s(&manifest), "--out", s(&container)],
        &[(
            "VCM_KEYFRAME_CODEC",
            "echo nope >&2; false {input} {output}",
        )],
    );
    assert_eq!(fail.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&fail.stderr);
    assert!(
        msg.starts_with("error[E_ENCODE]:") && msg.contains("nope"),
        "{msg}"
    );
}

#[test]
fn usage_errors_exit_nonzero() {
    let out = vcm(&["encode"], &[]);
    assert!(!out.status.success());
    let out = vcm(&["bogus"], &[]);
    assert!(!out.status.success());
}
