//! `vcm` command-line front end for layered keypoint/key-frame clips.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use vcm_core::keypoint::{
    ClipFeatureStream, CompressionBackend, FeatureCodecConfig, DEFAULT_COV_STEP, DEFAULT_FPS,
    DEFAULT_POS_STEP,
};
use vcm_core::motion::{SynthesisBackend, WeightBundle};
use vcm_core::pipeline::{
    decode_features, decode_layers, encode_clip, evaluate, save_pnm, synthesize_clip,
    synthetic_clip_generator, write_keypoint_sidecar, ClipManifest, EncodeConfig, KeyframeCodec,
    LayeredBitstream, MovingShape, ShapeKind, SyntheticSpec,
};
use vcm_core::{Error, Result};

const TOY_WEIGHTS_SEED: u64 = 42;

#[derive(Parser)]
#[command(
    name = "vcm",
    version,
    about = "Layered keypoint feature and key-frame video codec"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a clip manifest and its keypoints into a layered container.
    Encode(EncodeArgs),
    /// Reconstruct every frame of a container.
    Decode(DecodeArgs),
    /// Extract keypoint trajectories from the feature layer only.
    DecodeFeatures(DecodeFeaturesArgs),
    /// Decode a container and score it against the original frames.
    Eval(EvalArgs),
    /// Generate a synthetic clip with ground-truth keypoints.
    Synth(SynthArgs),
}

#[derive(clap::Args)]
struct EncodeArgs {
    manifest: PathBuf,
    /// Keypoint sidecar (feature bitstream); defaults to the manifest's entry.
    #[arg(long)]
    keypoints: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Frame rate written to the stream; defaults to the manifest's.
    #[arg(long)]
    fps: Option<f64>,
    /// Expected keypoints per frame; checked against the sidecar.
    #[arg(long)]
    points: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_POS_STEP)]
    pos_step: f64,
    #[arg(long, default_value_t = DEFAULT_COV_STEP)]
    cov_step: f64,
    /// `lossless` or a shell template using {mode}, {input} and {output}.
    #[arg(long, default_value = "lossless")]
    keyframe_codec: String,
    #[arg(long, value_enum, default_value_t = Compression::Lzma)]
    compression: Compression,
}

#[derive(Clone, Copy, ValueEnum)]
enum Compression {
    Lzma,
    Raw,
}

#[derive(clap::Args)]
struct BackendArgs {
    /// `analytic`, `learned` (needs --weights) or a path to a weight file.
    #[arg(long, default_value = "analytic")]
    backend: String,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Interpolation bandwidth of the analytic backend in pixels.
    #[arg(long)]
    sigma_interp: Option<f64>,
}

#[derive(clap::Args)]
struct DecodeArgs {
    input: PathBuf,
    /// Output directory for the decoded frames.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(clap::Args)]
struct DecodeFeaturesArgs {
    input: PathBuf,
    /// JSON output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvalArgs {
    input: PathBuf,
    /// Manifest of the ground-truth frames.
    manifest: PathBuf,
    /// Frame rate for bitrate accounting; defaults to the stream's.
    #[arg(long)]
    fps: Option<f64>,
    #[command(flatten)]
    backend: BackendArgs,
    /// JSON report file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Disk,
    Rect,
}

#[derive(clap::Args)]
struct SynthArgs {
    /// Output directory; receives the frames plus a manifest and keypoint sidecar.
    #[arg(long)]
    out: PathBuf,
    /// JSON clip description; replaces the shape flags below.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Shape::Disk)]
    shape: Shape,
    #[arg(long, default_value_t = 32)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Disk radius, or half the rectangle width.
    #[arg(long, default_value_t = 8.0)]
    size: f64,
    /// Start position `x,y`; defaults to a quarter of the width, mid height.
    #[arg(long, value_parser = parse_pair)]
    start: Option<[f64; 2]>,
    /// Per-frame motion `dx,dy`.
    #[arg(long, value_parser = parse_pair, default_value = "1,0")]
    velocity: [f64; 2],
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = 16)]
    points: usize,
    #[arg(long, default_value_t = DEFAULT_FPS)]
    fps: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write a seeded toy weight file for the learned backend.
    #[arg(long)]
    write_weights: Option<PathBuf>,
}

fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    let (a, b) = s.split_once(',').ok_or("expected `x,y`")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok([p(a)?, p(b)?])
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, format!("{text}\n"))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn with_fps(s: ClipFeatureStream, fps: f64) -> Result<ClipFeatureStream> {
    ClipFeatureStream::new(s.frames().to_vec(), s.height(), s.width(), fps)
}

fn encode(a: EncodeArgs) -> Result<()> {
    let manifest = ClipManifest::load(&a.manifest)?;
    let frames = manifest.load_frames()?;
    let keypoints = match &a.keypoints {
        Some(p) => vcm_core::pipeline::read_keypoint_sidecar(p)?,
        None => manifest.load_keypoints()?.ok_or_else(|| {
            invalid("no keypoints: pass --keypoints or set `keypoints` in the manifest")
        })?,
    };
    if let Some(l) = a.points {
        if l != keypoints.points_per_frame() {
            return Err(invalid(format!(
                "--points {l} but the keypoint source has {} per frame",
                keypoints.points_per_frame()
            )));
        }
    }
    let keypoints = with_fps(keypoints, a.fps.unwrap_or(manifest.fps))?;
    let config = EncodeConfig {
        features: FeatureCodecConfig {
            pos_step: a.pos_step,
            cov_step: a.cov_step,
            backend: match a.compression {
                Compression::Lzma => CompressionBackend::Lzma,
                Compression::Raw => CompressionBackend::Raw,
            },
        },
        keyframe_codec: KeyframeCodec::from_env_or(KeyframeCodec::parse(&a.keyframe_codec)?)?,
        max_frames: manifest.max_frames,
        clip_id: None,
    };
    let bytes = encode_clip(&frames, &keypoints, &config)?.to_bytes()?;
    fs::write(&a.out, &bytes)?;
    eprintln!(
        "wrote {} ({} bytes, {} frames)",
        a.out.display(),
        bytes.len(),
        frames.len()
    );
    Ok(())
}

fn build_backend(b: &BackendArgs, channels: usize, points: usize) -> Result<SynthesisBackend> {
    let weights = match b.backend.as_str() {
        "analytic" => {
            return Ok(match b.sigma_interp {
                Some(s) => SynthesisBackend::analytic(s),
                None => SynthesisBackend::default(),
            })
        }
        "learned" => b
            .weights
            .clone()
            .ok_or_else(|| invalid("the learned backend needs --weights <file>"))?,
        path => PathBuf::from(path),
    };
    SynthesisBackend::learned(&WeightBundle::load(weights)?, channels, points)
}

fn decode_frames(
    input: &Path,
    b: &BackendArgs,
) -> Result<(Vec<u8>, Vec<vcm_core::motion::Image>, SynthesisBackend)> {
    let bytes = fs::read(input)?;
    let layers = decode_layers(&bytes)?;
    let backend = build_backend(
        b,
        layers.key_frame.channels(),
        layers.features.points_per_frame(),
    )?;
    let frames = synthesize_clip(&layers, &backend)?;
    Ok((bytes, frames, backend))
}

fn decode(a: DecodeArgs) -> Result<()> {
    let (_, frames, _) = decode_frames(&a.input, &a.backend)?;
    fs::create_dir_all(&a.out)?;
    for (i, f) in frames.iter().enumerate() {
        let ext = if f.channels() == 1 { "pgm" } else { "ppm" };
        save_pnm(a.out.join(format!("frame_{i:03}.{ext}")), f)?;
    }
    eprintln!("wrote {} frames to {}", frames.len(), a.out.display());
    Ok(())
}

fn decode_features_cmd(a: DecodeFeaturesArgs) -> Result<()> {
    let bytes = fs::read(&a.input)?;
    let traj = decode_features(&bytes)?;
    let (frames, points, _) = traj.shape();
    let doc = json!({ "frames": frames, "points": points, "trajectories": traj.to_nested() });
    write_output(
        a.out.as_deref(),
        &serde_json::to_string_pretty(&doc).expect("plain JSON values"),
    )
}

fn eval(a: EvalArgs) -> Result<()> {
    let manifest = ClipManifest::load(&a.manifest)?;
    let truth = manifest.load_frames()?;
    let (bytes, recon, backend) = decode_frames(&a.input, &a.backend)?;
    let container = LayeredBitstream::parse(&bytes)?;
    let fps = match a.fps {
        Some(f) => f,
        None => vcm_core::pipeline::decode_feature_layer(&bytes)?.fps(),
    };
    let report = evaluate(&recon, &truth, &container, fps)?.with_synthesis(&backend);
    write_output(a.out.as_deref(), &report.to_json())
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => serde_json::from_str::<SyntheticSpec>(&fs::read_to_string(p)?)
            .map_err(|e| Error::InvalidSpec(format!("{}: {e}", p.display())))?,
        None => {
            let kind = match a.shape {
                Shape::Disk => ShapeKind::Disk { radius: a.size },
                Shape::Rect => ShapeKind::Rect {
                    width: 2.0 * a.size,
                    height: 1.5 * a.size,
                },
            };
            SyntheticSpec {
                height: a.height,
                width: a.width,
                frames: a.frames,
                channels: a.channels,
                points: a.points,
                fps: a.fps,
                background: 0.0,
                noise: a.noise,
                seed: a.seed,
                shapes: vec![MovingShape {
                    kind,
                    center: a
                        .start
                        .unwrap_or([a.width as f64 / 4.0, a.height as f64 / 2.0]),
                    velocity: a.velocity,
                    intensity: 1.0,
                }],
            }
        }
    };
    let (frames, keypoints) = synthetic_clip_generator(&spec)?;
    fs::create_dir_all(&a.out)?;
    let ext = if spec.channels == 1 { "pgm" } else { "ppm" };
    let mut names = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let name = PathBuf::from(format!("frame_{i:03}.{ext}"));
        save_pnm(a.out.join(&name), f)?;
        names.push(name);
    }
    write_keypoint_sidecar(a.out.join("keypoints.vcmf"), &keypoints)?;
    let mut manifest = ClipManifest::new(names, spec.height, spec.width, spec.fps);
    manifest.keypoints = Some("keypoints.vcmf".into());
    manifest.save(a.out.join("manifest.json"))?;
    if let Some(p) = &a.write_weights {
        WeightBundle::toy_learned_backend(TOY_WEIGHTS_SEED, spec.channels, spec.points).save(p)?;
    }
    eprintln!("wrote {} frames to {}", frames.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::DecodeFeatures(a) => decode_features_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
