//! Deterministic clips of moving anti-aliased shapes with exact keypoint tracks.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Cov2, Point2, DEFAULT_POINTS};
use crate::keypoint::{ClipFeatureStream, FrameKeypoints, KeypointDescriptor, DEFAULT_FPS};
use crate::motion::Image;

const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShapeKind {
    Disk { radius: f64 },
    Rect { width: f64, height: f64 },
}

impl ShapeKind {
    /// Half extents of the bounding box.
    fn half_extent(self) -> (f64, f64) {
        match self {
            ShapeKind::Disk { radius } => (radius, radius),
            ShapeKind::Rect { width, height } => (width / 2.0, height / 2.0),
        }
    }

    fn contains(self, dx: f64, dy: f64) -> bool {
        match self {
            ShapeKind::Disk { radius } => dx * dx + dy * dy <= radius * radius,
            ShapeKind::Rect { width, height } => {
                dx.abs() <= width / 2.0 && dy.abs() <= height / 2.0
            }
        }
    }

    /// Isotropic variance with the trace of the shape's uniform-density covariance.
    fn variance(self) -> f64 {
        match self {
            ShapeKind::Disk { radius } => radius * radius / 4.0,
            ShapeKind::Rect { width, height } => (width * width + height * height) / 24.0,
        }
    }

    /// Points fixed to the shape: its center for a disk, the four corners for a rectangle.
    fn anchors(self) -> Vec<(f64, f64)> {
        match self {
            ShapeKind::Disk { .. } => vec![(0.0, 0.0)],
            ShapeKind::Rect { width, height } => {
                let (hx, hy) = (width / 2.0, height / 2.0);
                vec![(-hx, -hy), (hx, -hy), (-hx, hy), (hx, hy)]
            }
        }
    }

    /// Radii of the inner ellipse that carries extra keypoints.
    fn ring(self) -> (f64, f64) {
        let (hx, hy) = self.half_extent();
        (hx / 2.0, hy / 2.0)
    }
}

/// A shape moving with constant velocity; `center` is its position in frame 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovingShape {
    #[serde(flatten)]
    pub kind: ShapeKind,
    pub center: [f64; 2],
    #[serde(default)]
    pub velocity: [f64; 2],
    #[serde(default = "default_intensity")]
    pub intensity: f64,
}

fn default_intensity() -> f64 {
    1.0
}

impl MovingShape {
    fn center_at(&self, t: usize) -> (f64, f64) {
        (
            self.center[0] + self.velocity[0] * t as f64,
            self.center[1] + self.velocity[1] * t as f64,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default)]
    pub background: f64,
    /// Standard deviation of per-frame Gaussian noise added before 8-bit quantization.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    pub shapes: Vec<MovingShape>,
}

fn default_channels() -> usize {
    1
}

fn default_points() -> usize {
    DEFAULT_POINTS
}

fn default_fps() -> f64 {
    DEFAULT_FPS
}

impl SyntheticSpec {
    /// A single bright disk of radius 8 crossing a 64×64 frame.
    pub fn translating_disk(frames: usize, velocity: [f64; 2]) -> Self {
        Self {
            height: 64,
            width: 64,
            frames,
            channels: 1,
            points: DEFAULT_POINTS,
            fps: DEFAULT_FPS,
            background: 0.0,
            noise: 0.0,
            seed: 0,
            shapes: vec![MovingShape {
                kind: ShapeKind::Disk { radius: 8.0 },
                center: [
                    16.0,
                    32.0 - velocity[1] * frames.saturating_sub(1) as f64 / 2.0,
                ],
                velocity,
                intensity: 1.0,
            }],
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return bad("frames, height and width must be positive".into());
        }
        if self.channels != 1 && self.channels != 3 {
            return bad(format!("channels must be 1 or 3, got {}", self.channels));
        }
        if self.shapes.is_empty() {
            return bad("at least one shape is required".into());
        }
        for v in [self.background, self.noise] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("background and noise must lie in [0, 1], got {v}"));
            }
        }
        let anchors: usize = self.shapes.iter().map(|s| s.kind.anchors().len()).sum();
        if self.points < anchors {
            return bad(format!(
                "{anchors} anchor keypoints do not fit in {} points",
                self.points
            ));
        }
        for (i, s) in self.shapes.iter().enumerate() {
            let (hx, hy) = s.kind.half_extent();
            if !(hx > 0.0 && hy > 0.0 && hx.is_finite() && hy.is_finite()) {
                return bad(format!("shape {i} has a degenerate size"));
            }
            if !(0.0..=1.0).contains(&s.intensity) {
                return bad(format!(
                    "shape {i} intensity {} outside [0, 1]",
                    s.intensity
                ));
            }
            for t in [0, self.frames - 1] {
                let (cx, cy) = s.center_at(t);
                let inside = cx - hx >= -0.5
                    && cx + hx <= self.width as f64 - 0.5
                    && cy - hy >= -0.5
                    && cy + hy <= self.height as f64 - 0.5;
                if !inside {
                    return bad(format!("shape {i} leaves the frame by frame {t}"));
                }
            }
        }
        Ok(())
    }

    /// Per-shape keypoint offsets from the shape center: anchors first, then
    /// extra points handed out round-robin and spread evenly on each shape's ring.
    fn keypoint_layout(&self) -> Vec<(usize, f64, f64)> {
        let mut layout: Vec<(usize, f64, f64)> = Vec::with_capacity(self.points);
        for (i, s) in self.shapes.iter().enumerate() {
            layout.extend(s.kind.anchors().into_iter().map(|(dx, dy)| (i, dx, dy)));
        }
        let extra = self.points - layout.len();
        let n = self.shapes.len();
        for (i, s) in self.shapes.iter().enumerate() {
            let count = extra / n + usize::from(i < extra % n);
            let (rx, ry) = s.kind.ring();
            for j in 0..count {
                let theta = TAU * j as f64 / count as f64;
                layout.push((i, rx * theta.cos(), ry * theta.sin()));
            }
        }
        layout
    }
}

fn coverage(kind: ShapeKind, cx: f64, cy: f64, x: usize, y: usize) -> f64 {
    let mut hits = 0;
    for sy in 0..SUPERSAMPLE {
        for sx in 0..SUPERSAMPLE {
            let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
            let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
            if kind.contains(px - cx, py - cy) {
                hits += 1;
            }
        }
    }
    hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
}

fn render(spec: &SyntheticSpec, t: usize, rng: &mut ChaCha8Rng) -> Result<Image> {
    let (h, w) = (spec.height, spec.width);
    let mut plane = vec![spec.background; h * w];
    for s in &spec.shapes {
        let (cx, cy) = s.center_at(t);
        let (hx, hy) = s.kind.half_extent();
        let rows = ((cy - hy - 1.0).floor().max(0.0) as usize)
            ..=((cy + hy + 1.0).ceil() as usize).min(h - 1);
        for y in rows {
            let cols = ((cx - hx - 1.0).floor().max(0.0) as usize)
                ..=((cx + hx + 1.0).ceil() as usize).min(w - 1);
            for x in cols {
                let c = coverage(s.kind, cx, cy, x, y);
                let v = &mut plane[y * w + x];
                *v = *v * (1.0 - c) + s.intensity * c;
            }
        }
    }
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        for v in &mut plane {
            *v += normal.sample(rng);
        }
    }
    let planes = vec![plane; spec.channels];
    Ok(Image::from_planes(h, w, &planes)?.quantized_u8())
}

/// Renders every frame (8-bit quantized) and the ground-truth keypoint stream.
pub fn synthetic_clip_generator(spec: &SyntheticSpec) -> Result<(Vec<Image>, ClipFeatureStream)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let frames = (0..spec.frames)
        .map(|t| render(spec, t, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let layout = spec.keypoint_layout();
    let keypoints = (0..spec.frames)
        .map(|t| {
            FrameKeypoints::new(
                layout
                    .iter()
                    .map(|&(i, dx, dy)| {
                        let s = &spec.shapes[i];
                        let (cx, cy) = s.center_at(t);
                        KeypointDescriptor::new(
                            Point2::new(cx + dx, cy + dy),
                            Cov2::isotropic(s.kind.variance()),
                        )
                    })
                    .collect(),
            )
        })
        .collect();
    let stream = ClipFeatureStream::new(keypoints, spec.height, spec.width, spec.fps)?;
    Ok((frames, stream))
}
