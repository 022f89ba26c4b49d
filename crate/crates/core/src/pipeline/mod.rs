//! Layered clip coding and its evaluation.
//!
//! Layer 0 is a feature bitstream and decodes without layer 1. Layer 1 holds
//! the first frame of the clip; every later frame is synthesized from it and
//! the decoded keypoints.

mod container;
mod keyframe;
mod pnm;
mod synthetic;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use container::{
    feature_layer_payload, Layer, LayerKind, LayeredBitstream, CONTAINER_HEADER_LEN,
    CONTAINER_MAGIC, CONTAINER_VERSION,
};
pub use keyframe::{
    decode_key_frame, encode_key_frame, KeyframeCodec, KeyframePayload, KEYFRAME_CODEC_ENV,
};
pub use pnm::{load_pnm, read_pnm, save_pnm, write_pnm};
pub use synthetic::{synthetic_clip_generator, MovingShape, ShapeKind, SyntheticSpec};

use crate::error::{Error, Result};
use crate::keypoint::{
    bitrate_kbps, decode_feature_stream, encode_feature_stream, positions_only_view,
    ClipFeatureStream, CompressionBackend, FeatureBitstream, FeatureCodecConfig, Trajectories,
    DEFAULT_FPS,
};
use crate::loss::ssim;
use crate::motion::{synthesize_frame, Image, SynthesisBackend};

/// Default and maximum number of frames coded against one key frame.
pub const DEFAULT_MAX_CLIP_FRAMES: usize = 32;

/// Quantization steps of keypoint sidecar files (the finest the header can express).
pub const SIDECAR_STEP: f64 = 1.0 / 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyFramePolicy {
    #[default]
    First,
}

/// JSON description of a clip on disk. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipManifest {
    pub frames: Vec<PathBuf>,
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default)]
    pub key_frame: KeyFramePolicy,
    #[serde(default = "default_max_frames")]
    pub max_frames: usize,
    /// Keypoint sidecar: a feature bitstream file, normally uncompressed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<PathBuf>,
    #[serde(skip)]
    base_dir: PathBuf,
}

fn default_fps() -> f64 {
    DEFAULT_FPS
}

fn default_max_frames() -> usize {
    DEFAULT_MAX_CLIP_FRAMES
}

impl ClipManifest {
    pub fn new(frames: Vec<PathBuf>, height: usize, width: usize, fps: f64) -> Self {
        Self {
            frames,
            height,
            width,
            fps,
            key_frame: KeyFramePolicy::First,
            max_frames: DEFAULT_MAX_CLIP_FRAMES,
            keypoints: None,
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut m: Self = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("manifest {}: {e}", path.display())))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::invalid("manifest lists no frames"));
        }
        if self.frames.len() > self.max_frames {
            return Err(Error::invalid(format!(
                "manifest lists {} frames, more than the clip limit {}",
                self.frames.len(),
                self.max_frames
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("manifest dims must be positive"));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::invalid(format!(
                "manifest fps must be positive, got {}",
                self.fps
            )));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn load_frames(&self) -> Result<Vec<Image>> {
        self.frames
            .iter()
            .map(|p| {
                let img = load_pnm(self.resolve(p))
                    .map_err(|e| Error::invalid(format!("frame {}: {e}", p.display())))?;
                if img.dims() != (self.height, self.width) {
                    return Err(Error::invalid(format!(
                        "frame {} is {:?}, manifest says {:?}",
                        p.display(),
                        img.dims(),
                        (self.height, self.width)
                    )));
                }
                Ok(img)
            })
            .collect()
    }

    pub fn load_keypoints(&self) -> Result<Option<ClipFeatureStream>> {
        self.keypoints
            .as_ref()
            .map(|p| read_keypoint_sidecar(self.resolve(p)))
            .transpose()
    }
}

pub fn write_keypoint_sidecar(path: impl AsRef<Path>, s: &ClipFeatureStream) -> Result<()> {
    let cfg = FeatureCodecConfig {
        pos_step: SIDECAR_STEP,
        cov_step: SIDECAR_STEP,
        backend: CompressionBackend::Raw,
    };
    fs::write(path, encode_feature_stream(s, &cfg)?.to_bytes())?;
    Ok(())
}

pub fn read_keypoint_sidecar(path: impl AsRef<Path>) -> Result<ClipFeatureStream> {
    decode_feature_stream(&fs::read(path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeConfig {
    pub features: FeatureCodecConfig,
    pub keyframe_codec: KeyframeCodec,
    pub max_frames: usize,
    /// Defaults to the CRC-32 of the feature layer.
    pub clip_id: Option<u64>,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        Self {
            features: FeatureCodecConfig::default(),
            keyframe_codec: KeyframeCodec::Lossless,
            max_frames: DEFAULT_MAX_CLIP_FRAMES,
            clip_id: None,
        }
    }
}

/// Codes frame 0 as the key frame and the whole keypoint stream as layer 0.
pub fn encode_clip(
    frames: &[Image],
    keypoints: &ClipFeatureStream,
    config: &EncodeConfig,
) -> Result<LayeredBitstream> {
    if frames.len() != keypoints.frame_count() {
        return Err(Error::invalid(format!(
            "{} frames but {} keypoint frames",
            frames.len(),
            keypoints.frame_count()
        )));
    }
    if frames.len() > config.max_frames {
        return Err(Error::invalid(format!(
            "clip has {} frames, more than the limit {}",
            frames.len(),
            config.max_frames
        )));
    }
    if let Some(f) = frames.iter().find(|f| f.dims() != keypoints.dims()) {
        return Err(Error::invalid(format!(
            "frame dims {:?} differ from keypoint dims {:?}",
            f.dims(),
            keypoints.dims()
        )));
    }
    let feature = encode_feature_stream(keypoints, &config.features)?.to_bytes();
    let key = encode_key_frame(&frames[0], 0, &config.keyframe_codec)?.to_bytes()?;
    Ok(LayeredBitstream {
        clip_id: config
            .clip_id
            .unwrap_or_else(|| u64::from(crc32fast::hash(&feature))),
        layers: vec![
            Layer {
                kind: LayerKind::Feature,
                payload: feature,
            },
            Layer {
                kind: LayerKind::KeyFrame,
                payload: key,
            },
        ],
    })
}

/// Decodes the keypoint stream from a container whose later layers may be
/// missing or truncated.
pub fn decode_feature_layer(bytes: &[u8]) -> Result<ClipFeatureStream> {
    decode_feature_stream(&feature_layer_payload(bytes)?)
}

/// Positions-only trajectories for machine analysis.
pub fn decode_features(bytes: &[u8]) -> Result<Trajectories> {
    Ok(positions_only_view(&decode_feature_layer(bytes)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedLayers {
    pub features: ClipFeatureStream,
    pub key_frame: Image,
    pub key_index: usize,
}

pub fn decode_layers(bytes: &[u8]) -> Result<DecodedLayers> {
    let features = decode_feature_layer(bytes)?;
    let (container, _) = LayeredBitstream::parse_prefix(bytes)?;
    let layer = container.layer(LayerKind::KeyFrame).ok_or_else(|| {
        Error::Decode(format!(
            "{} is absent or truncated",
            LayerKind::KeyFrame.name()
        ))
    })?;
    let payload = KeyframePayload::parse(&layer.payload)?;
    let key_index = payload.key_index as usize;
    if key_index >= features.frame_count() {
        return Err(Error::Decode(format!(
            "key-frame index {key_index} is outside the {}-frame clip",
            features.frame_count()
        )));
    }
    let key_frame = decode_key_frame(&payload)?;
    if key_frame.dims() != features.dims() {
        return Err(Error::Decode(format!(
            "key frame is {:?}, feature layer says {:?}",
            key_frame.dims(),
            features.dims()
        )));
    }
    Ok(DecodedLayers {
        features,
        key_frame,
        key_index,
    })
}

/// Renders all frames in parallel; the key frame itself is returned unchanged.
pub fn synthesize_clip(layers: &DecodedLayers, backend: &SynthesisBackend) -> Result<Vec<Image>> {
    let kps = &layers.features;
    let key_kps = kps.frame(layers.key_index);
    (0..kps.frame_count())
        .into_par_iter()
        .map(|t| {
            if t == layers.key_index {
                Ok(layers.key_frame.clone())
            } else {
                synthesize_frame(&layers.key_frame, key_kps, kps.frame(t), backend)
            }
        })
        .collect()
}

pub fn decode_clip(bytes: &[u8], backend: &SynthesisBackend) -> Result<Vec<Image>> {
    synthesize_clip(&decode_layers(bytes)?, backend)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub points: usize,
    pub fps: f64,
    pub pos_step: f64,
    pub cov_step: f64,
    pub feature_backend: String,
    pub keyframe_codec: String,
    /// Recorded command template of an external key-frame codec.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyframe_params: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_ssim: f64,
    pub per_frame_ssim: Vec<f64>,
    /// Whole feature layer, header included.
    pub feature_kbps: f64,
    /// Compressed keypoint payload only.
    pub feature_payload_kbps: f64,
    pub video_kbps: f64,
    pub total_kbps: f64,
    pub feature_bytes: u64,
    pub video_bytes: u64,
    pub config: EvalConfig,
}

impl EvalReport {
    pub fn with_synthesis(mut self, backend: &SynthesisBackend) -> Self {
        self.config.synthesis = Some(backend.name().to_owned());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are always serializable")
    }
}

/// Scores `recon` against `truth` and accounts the bitrate of each layer of `container`.
pub fn evaluate(
    recon: &[Image],
    truth: &[Image],
    container: &LayeredBitstream,
    fps: f64,
) -> Result<EvalReport> {
    if recon.len() != truth.len() || recon.is_empty() {
        return Err(Error::invalid(format!(
            "{} reconstructed frames vs {} ground-truth frames",
            recon.len(),
            truth.len()
        )));
    }
    let per_frame_ssim = recon
        .par_iter()
        .zip(truth)
        .map(|(a, b)| ssim(a, b))
        .collect::<Result<Vec<_>>>()?;
    let mean_ssim = per_frame_ssim.iter().sum::<f64>() / per_frame_ssim.len() as f64;

    let feature = container
        .layer(LayerKind::Feature)
        .ok_or_else(|| Error::invalid("container has no feature layer"))?;
    let fb = FeatureBitstream::parse(&feature.payload)?;
    let key = container.layer(LayerKind::KeyFrame);
    let key_payload = key
        .map(|l| KeyframePayload::parse(&l.payload))
        .transpose()?;

    let n = recon.len();
    let feature_bytes = feature.payload.len() as u64;
    let video_bytes = key.map_or(0, |l| l.payload.len() as u64);
    let feature_kbps = bitrate_kbps(feature_bytes, n, fps)?;
    let video_kbps = bitrate_kbps(video_bytes, n, fps)?;
    let h = fb.header;
    Ok(EvalReport {
        mean_ssim,
        per_frame_ssim,
        feature_kbps,
        feature_payload_kbps: bitrate_kbps(h.payload_len, n, fps)?,
        video_kbps,
        total_kbps: feature_kbps + video_kbps,
        feature_bytes,
        video_bytes,
        config: EvalConfig {
            frames: n,
            height: h.height.into(),
            width: h.width.into(),
            points: h.points.into(),
            fps,
            pos_step: h.pos_step(),
            cov_step: h.cov_step(),
            feature_backend: h.backend.name().to_owned(),
            keyframe_codec: match key_payload.as_ref().map(|p| p.codec_id) {
                Some(0) => "lossless".into(),
                Some(_) => "external".into(),
                None => "none".into(),
            },
            keyframe_params: key_payload.map(|p| p.params).filter(|p| !p.is_empty()),
            synthesis: None,
        },
    })
}
