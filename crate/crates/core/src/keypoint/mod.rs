//! Keypoint feature layer. Descriptors are quantized with fixed steps and
//! packed into the compressed `VCMF` bitstream that machine-analysis
//! consumers decode alone.

mod bitstream;

pub use bitstream::{
    decode_feature_stream, decode_quantized, encode_feature_stream, quantize_stream,
    CompressionBackend, FeatureBitstream, FeatureCodecConfig, FeatureHeader, QuantizedStream,
    FEATURE_HEADER_LEN, FEATURE_MAGIC, FEATURE_VERSION,
};

use crate::error::{Error, Result};
use crate::grid::{Cov2, Point2};

pub const DEFAULT_POS_STEP: f64 = 2.0;
pub const DEFAULT_COV_STEP: f64 = 64.0;
pub const DEFAULT_FPS: f64 = 30.0;

/// Largest covariance variance (pixels²) a decoded keypoint may carry.
/// The decoded inverse covariance has its eigenvalues floored at the reciprocal.
pub const MAX_DECODED_VARIANCE: f64 = 1e4;

/// Position plus covariance: six scalars per keypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointDescriptor {
    pub position: Point2,
    pub covariance: Cov2,
}

impl KeypointDescriptor {
    pub const fn new(position: Point2, covariance: Cov2) -> Self {
        Self {
            position,
            covariance,
        }
    }

    pub fn payload(&self) -> [f64; 6] {
        let c = self.covariance;
        [self.position.x, self.position.y, c.xx, c.xy, c.yx, c.yy]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameKeypoints {
    pub points: Vec<KeypointDescriptor>,
}

impl FrameKeypoints {
    pub fn new(points: Vec<KeypointDescriptor>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = Point2> + '_ {
        self.points.iter().map(|k| k.position)
    }
}

/// The per-frame keypoint sequence of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatureStream {
    frames: Vec<FrameKeypoints>,
    height: usize,
    width: usize,
    fps: f64,
}

impl ClipFeatureStream {
    pub fn new(frames: Vec<FrameKeypoints>, height: usize, width: usize, fps: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::invalid("feature stream needs at least one frame"));
        }
        if height == 0 || width == 0 {
            return Err(Error::invalid("feature stream dims must be positive"));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        let points = frames[0].len();
        if let Some(t) = frames.iter().position(|f| f.len() != points) {
            return Err(Error::invalid(format!(
                "frame {t} has {} keypoints, expected {points}",
                frames[t].len()
            )));
        }
        for (t, f) in frames.iter().enumerate() {
            for (l, k) in f.points.iter().enumerate() {
                if !k.position.is_finite() || !k.covariance.is_finite() {
                    return Err(Error::invalid(format!(
                        "non-finite keypoint {l} in frame {t}"
                    )));
                }
            }
        }
        Ok(Self {
            frames,
            height,
            width,
            fps,
        })
    }

    pub fn frames(&self) -> &[FrameKeypoints] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &FrameKeypoints {
        &self.frames[t]
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn points_per_frame(&self) -> usize {
        self.frames[0].len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }
}

/// Integer indices of one quantized keypoint: `(qx, qy)` on the position
/// step, and `qic = (xx, xy, yx, yy)` of the inverse covariance on the
/// covariance step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct QuantizedKeypoint {
    pub qx: i64,
    pub qy: i64,
    pub qic: [i64; 4],
}

impl QuantizedKeypoint {
    pub fn fields(&self) -> [i64; 6] {
        [
            self.qx,
            self.qy,
            self.qic[0],
            self.qic[1],
            self.qic[2],
            self.qic[3],
        ]
    }

    pub fn from_fields(f: [i64; 6]) -> Self {
        Self {
            qx: f[0],
            qy: f[1],
            qic: [f[2], f[3], f[4], f[5]],
        }
    }
}

fn quantize_scalar(value: f64, step: f64) -> Result<i64> {
    // f64::round is round-half-away-from-zero.
    let q = (value / step).round();
    if !q.is_finite() || q.abs() > (1u64 << 52) as f64 {
        return Err(Error::invalid(format!(
            "value {value} cannot be quantized with step {step}"
        )));
    }
    Ok(q as i64)
}

fn check_step(step: f64, what: &str) -> Result<()> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{what} step must be positive, got {step}"
        )))
    }
}

pub fn quantize_keypoint(
    k: &KeypointDescriptor,
    pos_step: f64,
    cov_step: f64,
) -> Result<QuantizedKeypoint> {
    check_step(pos_step, "position")?;
    check_step(cov_step, "covariance")?;
    if !k.position.is_finite() {
        return Err(Error::invalid("non-finite keypoint position"));
    }
    let inv = k.covariance.regularized_inverse()?;
    let mut qic = [0i64; 4];
    for (q, v) in qic.iter_mut().zip(inv.entries()) {
        *q = quantize_scalar(v, cov_step)?;
    }
    Ok(QuantizedKeypoint {
        qx: quantize_scalar(k.position.x, pos_step)?,
        qy: quantize_scalar(k.position.y, pos_step)?,
        qic,
    })
}

/// The dequantized inverse covariance exactly as stored, before
/// symmetrization or flooring.
pub fn raw_inverse_covariance(q: &QuantizedKeypoint, cov_step: f64) -> Cov2 {
    let [a, b, c, d] = q.qic.map(|v| v as f64 * cov_step);
    Cov2::new(a, b, c, d)
}

/// Symmetrized inverse covariance with eigenvalues floored at
/// `1 / MAX_DECODED_VARIANCE`; always positive definite.
pub fn dequantized_inverse_covariance(q: &QuantizedKeypoint, cov_step: f64) -> Cov2 {
    let raw = raw_inverse_covariance(q, cov_step);
    let off = 0.5 * (raw.xy + raw.yx);
    floor_eigenvalues(
        Cov2::symmetric(raw.xx, off, raw.yy),
        1.0 / MAX_DECODED_VARIANCE,
    )
}

pub fn dequantize_keypoint(
    q: &QuantizedKeypoint,
    pos_step: f64,
    cov_step: f64,
) -> KeypointDescriptor {
    let inv = dequantized_inverse_covariance(q, cov_step);
    // The floor makes `inv` positive definite, so reciprocal eigenvalues are finite.
    let covariance = map_eigenvalues(inv, |l| 1.0 / l);
    KeypointDescriptor::new(
        Point2::new(q.qx as f64 * pos_step, q.qy as f64 * pos_step),
        covariance,
    )
}

fn floor_eigenvalues(m: Cov2, floor: f64) -> Cov2 {
    let (min, _) = m.eigenvalues();
    if min >= floor {
        return m;
    }
    map_eigenvalues(m, |l| l.max(floor))
}

/// Applies `f` to the eigenvalues of a symmetric 2×2 matrix.
fn map_eigenvalues(m: Cov2, f: impl Fn(f64) -> f64) -> Cov2 {
    if m.xy == 0.0 {
        return Cov2::symmetric(f(m.xx), 0.0, f(m.yy));
    }
    let (lo, hi) = m.eigenvalues();
    let (flo, fhi) = (f(lo), f(hi));
    // Unit eigenvector of the larger eigenvalue.
    let (vx, vy) = {
        let (x, y) = (m.xy, hi - m.xx);
        let n = x.hypot(y);
        (x / n, y / n)
    };
    // M = hi·v vᵀ + lo·u uᵀ with u ⟂ v; u uᵀ = I − v vᵀ.
    let xx = fhi * vx * vx + flo * (1.0 - vx * vx);
    let yy = fhi * vy * vy + flo * (1.0 - vy * vy);
    let xy = (fhi - flo) * vx * vy;
    Cov2::symmetric(xx, xy, yy)
}

/// Positions only, shaped `frames × points × 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    frames: usize,
    points: usize,
    data: Vec<[f64; 2]>,
}

impl Trajectories {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.frames, self.points, 2)
    }

    pub fn position(&self, frame: usize, point: usize) -> [f64; 2] {
        self.data[frame * self.points + point]
    }

    /// Displacement of `point` from frame `t − 1` to frame `t`.
    pub fn displacement(&self, t: usize, point: usize) -> [f64; 2] {
        let a = self.position(t - 1, point);
        let b = self.position(t, point);
        [b[0] - a[0], b[1] - a[1]]
    }

    pub fn to_nested(&self) -> Vec<Vec<[f64; 2]>> {
        self.data
            .chunks(self.points.max(1))
            .map(<[_]>::to_vec)
            .collect()
    }
}

pub fn positions_only_view(s: &ClipFeatureStream) -> Trajectories {
    Trajectories {
        frames: s.frame_count(),
        points: s.points_per_frame(),
        data: s
            .frames()
            .iter()
            .flat_map(|f| f.positions().map(|p| [p.x, p.y]))
            .collect(),
    }
}

pub fn bitrate_kbps(byte_count: u64, frame_count: usize, fps: f64) -> Result<f64> {
    if frame_count == 0 {
        return Err(Error::invalid("bitrate needs at least one frame"));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::invalid(format!("fps must be positive, got {fps}")));
    }
    let seconds = frame_count as f64 / fps;
    Ok(byte_count as f64 * 8.0 / seconds / 1000.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kp(x: f64, y: f64, cov: Cov2) -> KeypointDescriptor {
        KeypointDescriptor::new(Point2::new(x, y), cov)
    }

    fn random_psd(rng: &mut impl Rng, lo: f64, hi: f64) -> Cov2 {
        let l1 = rng.gen_range(lo..hi);
        let l2 = rng.gen_range(lo..hi);
        let th: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let (c, s) = (th.cos(), th.sin());
        Cov2::symmetric(
            l1 * c * c + l2 * s * s,
            (l1 - l2) * c * s,
            l1 * s * s + l2 * c * c,
        )
    }

    #[test]
    fn position_quantization_rounds_half_away() {
        let q = quantize_keypoint(&kp(100.0, 37.0, Cov2::isotropic(4.0)), 2.0, 64.0).unwrap();
        assert_eq!((q.qx, q.qy), (50, 19));
        let q = quantize_keypoint(&kp(-3.0, -1.0, Cov2::isotropic(4.0)), 2.0, 64.0).unwrap();
        assert_eq!((q.qx, q.qy), (-2, -1));
    }

    #[test]
    fn small_inverse_covariance_quantizes_to_zero_and_is_floored() {
        let q = quantize_keypoint(&kp(0.0, 0.0, Cov2::isotropic(4.0)), 2.0, 64.0).unwrap();
        assert_eq!(q.qic, [0, 0, 0, 0]);
        let inv = dequantized_inverse_covariance(&q, 64.0);
        assert_eq!(inv, Cov2::isotropic(1.0 / MAX_DECODED_VARIANCE));
        let k = dequantize_keypoint(&q, 2.0, 64.0);
        assert!((k.covariance.xx - MAX_DECODED_VARIANCE).abs() < 1e-6);
        assert!((k.covariance.yy - MAX_DECODED_VARIANCE).abs() < 1e-6);
    }

    #[test]
    fn lattice_inverse_entry_is_exact() {
        let inv = Cov2::symmetric(192.0, 0.0, 192.0);
        let sigma = inv.inverse().unwrap();
        let q = quantize_keypoint(&kp(0.0, 0.0, sigma), 2.0, 64.0).unwrap();
        assert_eq!(q.qic[0], 3);
        assert_eq!(raw_inverse_covariance(&q, 64.0).xx, 192.0);
    }

    #[test]
    fn dequantize_position() {
        let q = QuantizedKeypoint {
            qx: 50,
            qy: 19,
            qic: [1, 0, 0, 1],
        };
        assert_eq!(
            dequantize_keypoint(&q, 2.0, 64.0).position,
            Point2::new(100.0, 38.0)
        );
    }

    #[test]
    fn quantization_error_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let cov = random_psd(&mut rng, 1e-3, 50.0);
            let k = kp(rng.gen_range(-2.0..130.0), rng.gen_range(-2.0..130.0), cov);
            let q = quantize_keypoint(&k, 2.0, 64.0).unwrap();
            let d = dequantize_keypoint(&q, 2.0, 64.0);
            assert!((d.position.x - k.position.x).abs() <= 1.0);
            assert!((d.position.y - k.position.y).abs() <= 1.0);
            let inv = cov.regularized_inverse().unwrap();
            let raw = raw_inverse_covariance(&q, 64.0);
            for (a, b) in inv.entries().iter().zip(raw.entries()) {
                assert!((a - b).abs() <= 32.0);
            }
        }
    }

    #[test]
    fn recovered_covariance_for_moderate_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let cov = random_psd(&mut rng, 1.0, 100.0);
            let q = quantize_keypoint(&kp(10.0, 10.0, cov), 2.0, 64.0).unwrap();
            let rec = dequantize_keypoint(&q, 2.0, 64.0).covariance;
            let rec_inv = rec.inverse().unwrap();
            let inv = cov.inverse().unwrap();
            for (a, b) in rec_inv.entries().iter().zip(inv.entries()) {
                assert!((a - b).abs() <= 32.0);
            }
            assert_eq!(rec.xy.to_bits(), rec.yx.to_bits());
            assert!(rec.eigenvalues().0 > 0.0);
        }
    }

    #[test]
    fn dequantized_covariance_is_always_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..500 {
            let q = QuantizedKeypoint {
                qx: 0,
                qy: 0,
                qic: [
                    rng.gen_range(-5..5),
                    rng.gen_range(-5..5),
                    rng.gen_range(-5..5),
                    rng.gen_range(-5..5),
                ],
            };
            let k = dequantize_keypoint(&q, 2.0, 64.0);
            assert!(k.covariance.is_finite());
            assert!(k.covariance.eigenvalues().0 > 0.0);
        }
    }

    #[test]
    fn eigenvalue_map_matches_direct_inverse() {
        let m = Cov2::symmetric(3.0, 1.25, 2.0);
        let via_eigen = map_eigenvalues(m, |l| 1.0 / l);
        let direct = m.inverse().unwrap();
        for (a, b) in via_eigen.entries().iter().zip(direct.entries()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn quantize_rejects_non_finite() {
        let bad = kp(f64::NAN, 0.0, Cov2::isotropic(1.0));
        assert!(quantize_keypoint(&bad, 2.0, 64.0).is_err());
        let bad = kp(0.0, 0.0, Cov2::isotropic(f64::INFINITY));
        assert!(quantize_keypoint(&bad, 2.0, 64.0).is_err());
        let ok = kp(0.0, 0.0, Cov2::isotropic(1.0));
        assert!(quantize_keypoint(&ok, 0.0, 64.0).is_err());
    }

    #[test]
    fn stream_rejects_empty_and_ragged() {
        assert!(ClipFeatureStream::new(vec![], 8, 8, 30.0).is_err());
        let a = FrameKeypoints::new(vec![kp(1.0, 1.0, Cov2::isotropic(1.0))]);
        let b = FrameKeypoints::new(vec![]);
        assert!(ClipFeatureStream::new(vec![a.clone(), b], 8, 8, 30.0).is_err());
        assert!(ClipFeatureStream::new(vec![a], 8, 8, 0.0).is_err());
    }

    #[test]
    fn positions_view_shape_and_motion() {
        let cov = Cov2::isotropic(2.0);
        let frames: Vec<_> = (0..2)
            .map(|_| FrameKeypoints::new((0..16).map(|l| kp(l as f64, 3.0, cov)).collect()))
            .collect();
        let s = ClipFeatureStream::new(frames, 32, 32, 30.0).unwrap();
        let t = positions_only_view(&s);
        assert_eq!(t.shape(), (2, 16, 2));
        for l in 0..16 {
            assert_eq!(t.displacement(1, l), [0.0, 0.0]);
        }
        assert_eq!(t.to_nested().len(), 2);
    }

    #[test]
    fn bitrate_arithmetic() {
        assert!((bitrate_kbps(1000, 32, 30.0).unwrap() - 7.5).abs() < 1e-12);
        assert!((bitrate_kbps(650, 32, 30.0).unwrap() - 4.875).abs() < 1e-12);
        assert_eq!(bitrate_kbps(0, 32, 30.0).unwrap(), 0.0);
        assert!(bitrate_kbps(10, 32, 0.0).is_err());
        assert!(bitrate_kbps(10, 0, 30.0).is_err());
    }
}
