//! Training objectives with hand-derived gradients, and SSIM.
//!
//! Expectations over discriminator outputs are arithmetic means over every
//! score element, so scalar and patch discriminators share one definition.
//! The L1 subgradient at zero is taken as zero.

mod gradcheck;
mod ssim;

pub use gradcheck::{grad_check, FD_STEP, KINK_MARGIN};
pub use ssim::{ssim, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};

use crate::error::{Error, Result};
use crate::grid::Point2;

pub const SKELETON_POINTS: usize = 16;

/// Ground-truth skeleton joints of one training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonLabel {
    points: [Point2; SKELETON_POINTS],
}

impl SkeletonLabel {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        let n = points.len();
        let points: [Point2; SKELETON_POINTS] = points.try_into().map_err(|_| {
            Error::invalid(format!(
                "skeleton label needs {SKELETON_POINTS} points, got {n}"
            ))
        })?;
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite skeleton point"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point2; SKELETON_POINTS] {
        &self.points
    }
}

/// One discriminator feature tensor (any shape, flattened).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::invalid(format!(
                "feature shape {shape:?} does not hold {} values",
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn flat(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            values,
        }
    }
}

/// Scores and per-layer features emitted by the discriminator for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorOutputs {
    pub scores: Vec<f64>,
    pub features: Vec<FeatureTensor>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub point: f64,
    pub rec: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            point: 20.0,
            rec: 10.0,
        }
    }
}

impl LossWeights {
    pub fn new(point: f64, rec: f64) -> Result<Self> {
        if !(point >= 0.0 && rec >= 0.0 && point.is_finite() && rec.is_finite()) {
            return Err(Error::invalid(
                "loss weights must be finite and nonnegative",
            ));
        }
        Ok(Self { point, rec })
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_batch(predicted: &[Vec<Point2>], labels: &[SkeletonLabel]) -> Result<()> {
    if predicted.is_empty() {
        return Err(Error::invalid("point loss needs at least one sample"));
    }
    if predicted.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    if let Some(i) = predicted.iter().position(|p| p.len() != SKELETON_POINTS) {
        return Err(Error::invalid(format!(
            "sample {i} has {} predicted points, expected {SKELETON_POINTS}",
            predicted[i].len()
        )));
    }
    Ok(())
}

/// Batch mean of the per-sample sum of L1 point errors.
pub fn l_point(predicted: &[Vec<Point2>], labels: &[SkeletonLabel]) -> Result<f64> {
    check_batch(predicted, labels)?;
    let total: f64 = predicted
        .iter()
        .zip(labels)
        .flat_map(|(p, l)| p.iter().zip(l.points()))
        .map(|(p, q)| (p.x - q.x).abs() + (p.y - q.y).abs())
        .sum();
    Ok(total / predicted.len() as f64)
}

/// `∂ l_point / ∂ p` per sample and point, as `[d/dx, d/dy]`.
pub fn l_point_grad(
    predicted: &[Vec<Point2>],
    labels: &[SkeletonLabel],
) -> Result<Vec<Vec<[f64; 2]>>> {
    check_batch(predicted, labels)?;
    let n = predicted.len() as f64;
    Ok(predicted
        .iter()
        .zip(labels)
        .map(|(p, l)| {
            p.iter()
                .zip(l.points())
                .map(|(p, q)| [sign(p.x - q.x) / n, sign(p.y - q.y) / n])
                .collect()
        })
        .collect())
}

fn check_scores(scores: &[f64], what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::invalid(format!("{what} scores are empty")));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "{what} scores contain non-finite values"
        )));
    }
    Ok(())
}

fn mean_sq_offset(scores: &[f64], target: f64) -> f64 {
    scores.iter().map(|s| (s - target).powi(2)).sum::<f64>() / scores.len() as f64
}

/// Least-squares discriminator loss: `mean((real − 1)²) + mean(fake²)`.
pub fn lsgan_d_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    check_scores(d_real, "real")?;
    check_scores(d_fake, "fake")?;
    Ok(mean_sq_offset(d_real, 1.0) + mean_sq_offset(d_fake, 0.0))
}

/// Gradients of [`lsgan_d_loss`] with respect to the real and fake scores.
pub fn lsgan_d_grad(d_real: &[f64], d_fake: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_scores(d_real, "real")?;
    check_scores(d_fake, "fake")?;
    let (nr, nf) = (d_real.len() as f64, d_fake.len() as f64);
    Ok((
        d_real.iter().map(|r| 2.0 * (r - 1.0) / nr).collect(),
        d_fake.iter().map(|f| 2.0 * f / nf).collect(),
    ))
}

/// Least-squares generator loss: `mean((fake − 1)²)`.
pub fn lsgan_g_loss(d_fake: &[f64]) -> Result<f64> {
    check_scores(d_fake, "fake")?;
    Ok(mean_sq_offset(d_fake, 1.0))
}

pub fn lsgan_g_grad(d_fake: &[f64]) -> Result<Vec<f64>> {
    check_scores(d_fake, "fake")?;
    let n = d_fake.len() as f64;
    Ok(d_fake.iter().map(|f| 2.0 * (f - 1.0) / n).collect())
}

fn check_features(real: &[FeatureTensor], fake: &[FeatureTensor]) -> Result<()> {
    if real.is_empty() {
        return Err(Error::invalid("feature matching needs at least one layer"));
    }
    if real.len() != fake.len() {
        return Err(Error::invalid(format!(
            "{} real layers vs {} fake layers",
            real.len(),
            fake.len()
        )));
    }
    for (i, (r, f)) in real.iter().zip(fake).enumerate() {
        if r.shape != f.shape || r.values.len() != f.values.len() {
            return Err(Error::invalid(format!(
                "layer {i} shape mismatch: {:?} vs {:?}",
                r.shape, f.shape
            )));
        }
        if r.values.is_empty() {
            return Err(Error::invalid(format!("layer {i} is empty")));
        }
    }
    Ok(())
}

/// Sum over layers of the mean absolute feature difference.
pub fn feature_matching_loss(real: &[FeatureTensor], fake: &[FeatureTensor]) -> Result<f64> {
    check_features(real, fake)?;
    Ok(real
        .iter()
        .zip(fake)
        .map(|(r, f)| {
            r.values
                .iter()
                .zip(&f.values)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / r.values.len() as f64
        })
        .sum())
}

/// Gradient of [`feature_matching_loss`] with respect to the fake features.
pub fn feature_matching_grad(
    real: &[FeatureTensor],
    fake: &[FeatureTensor],
) -> Result<Vec<Vec<f64>>> {
    check_features(real, fake)?;
    Ok(real
        .iter()
        .zip(fake)
        .map(|(r, f)| {
            let n = r.values.len() as f64;
            r.values
                .iter()
                .zip(&f.values)
                .map(|(a, b)| sign(b - a) / n)
                .collect()
        })
        .collect())
}

pub fn total_loss(l_point: f64, l_rec: f64, l_g: f64, w: &LossWeights) -> f64 {
    w.point * l_point + w.rec * l_rec + l_g
}

/// Gradient of [`total_loss`] from component gradients over a shared variable vector.
pub fn total_loss_grad(
    grad_point: &[f64],
    grad_rec: &[f64],
    grad_g: &[f64],
    w: &LossWeights,
) -> Result<Vec<f64>> {
    if grad_point.len() != grad_rec.len() || grad_point.len() != grad_g.len() {
        return Err(Error::invalid(
            "component gradients must share one variable vector",
        ));
    }
    Ok(grad_point
        .iter()
        .zip(grad_rec)
        .zip(grad_g)
        .map(|((p, r), g)| w.point * p + w.rec * r + g)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn label(points: &[Point2]) -> SkeletonLabel {
        SkeletonLabel::new(points.to_vec()).unwrap()
    }

    fn random_points(rng: &mut impl Rng) -> Vec<Point2> {
        (0..16)
            .map(|_| Point2::new(rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0)))
            .collect()
    }

    #[test]
    fn point_loss_trivial_cases() {
        let pts: Vec<Point2> = (0..16)
            .map(|i| Point2::new(i as f64, 2.0 * i as f64))
            .collect();
        assert_eq!(
            l_point(std::slice::from_ref(&pts), &[label(&pts)]).unwrap(),
            0.0
        );
        let mut off = pts.clone();
        off[3] = off[3].translate(1.0, 1.0);
        assert_eq!(l_point(&[off], &[label(&pts)]).unwrap(), 2.0);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn point_loss_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pred: Vec<_> = (0..2).map(|_| random_points(&mut rng)).collect();
        let labels: Vec<_> = (0..2).map(|_| label(&random_points(&mut rng))).collect();
        let mut oracle = 0.0;
        for i in 0..2 {
            for l in 0..16 {
                oracle += (pred[i][l].x - labels[i].points()[l].x).abs();
                oracle += (pred[i][l].y - labels[i].points()[l].y).abs();
            }
        }
        oracle /= 2.0;
        assert!((l_point(&pred, &labels).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn point_loss_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let pred: Vec<_> = (0..3).map(|_| random_points(&mut rng)).collect();
        let labels: Vec<_> = (0..3).map(|_| label(&random_points(&mut rng))).collect();
        let base = l_point(&pred, &labels).unwrap();
        let pred_r: Vec<_> = pred.iter().rev().cloned().collect();
        let labels_r: Vec<_> = labels.iter().rev().cloned().collect();
        assert!((l_point(&pred_r, &labels_r).unwrap() - base).abs() < 1e-12);
        // Matching one point exactly makes the loss sensitive to point order.
        let mut matched = pred.clone();
        matched[0][0] = labels[0].points()[0];
        matched[0][1] = labels[0].points()[0].translate(40.0, 40.0);
        let base = l_point(&matched, &labels).unwrap();
        let mut swapped = matched.clone();
        swapped[0].swap(0, 1);
        assert_ne!(l_point(&swapped, &labels).unwrap(), base);
    }

    #[test]
    fn point_loss_rejects_bad_batches() {
        let pts: Vec<Point2> = vec![Point2::default(); 16];
        assert!(l_point(&[], &[]).is_err());
        assert!(l_point(std::slice::from_ref(&pts), &[]).is_err());
        assert!(l_point(&[pts[..15].to_vec()], &[label(&pts)]).is_err());
        assert!(SkeletonLabel::new(vec![Point2::default(); 15]).is_err());
    }

    #[test]
    fn lsgan_values() {
        assert_eq!(lsgan_d_loss(&[1.0, 1.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(lsgan_d_loss(&[0.0], &[1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(lsgan_d_loss(&[0.5], &[0.5]).unwrap(), 0.5);
        assert_eq!(lsgan_g_loss(&[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(lsgan_g_loss(&[0.0]).unwrap(), 1.0);
        assert!((lsgan_g_loss(&[0.0, 0.5, 1.0]).unwrap() - 1.25 / 3.0).abs() < 1e-15);
        assert!(lsgan_d_loss(&[], &[0.0]).is_err());
        assert!(lsgan_g_loss(&[]).is_err());
        assert!(lsgan_g_loss(&[f64::NAN]).is_err());
    }

    #[test]
    fn feature_matching_values() {
        let real = vec![
            FeatureTensor::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            FeatureTensor::flat(vec![1.0, -1.0]),
        ];
        assert_eq!(feature_matching_loss(&real, &real).unwrap(), 0.0);
        let shifted = vec![FeatureTensor::flat(vec![0.5, 1.5, -2.0])];
        let base = vec![FeatureTensor::flat(vec![0.0, 1.0, -2.5])];
        assert!((feature_matching_loss(&base, &shifted).unwrap() - 0.5).abs() < 1e-15);
        assert!(feature_matching_loss(&real, &real[..1]).is_err());
        assert!(feature_matching_loss(&[], &[]).is_err());
        let other = vec![
            FeatureTensor::flat(vec![0.0; 4]),
            FeatureTensor::flat(vec![0.0; 2]),
        ];
        assert!(feature_matching_loss(&real, &other).is_err());
    }

    #[test]
    fn feature_matching_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mk = |rng: &mut ChaCha8Rng| -> Vec<FeatureTensor> {
            [5usize, 12, 3]
                .iter()
                .map(|&n| FeatureTensor::flat((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()))
                .collect()
        };
        let (a, b) = (mk(&mut rng), mk(&mut rng));
        let mut oracle = 0.0;
        for layer in 0..3 {
            let mut s = 0.0;
            for i in 0..a[layer].values.len() {
                s += (a[layer].values[i] - b[layer].values[i]).abs();
            }
            oracle += s / a[layer].values.len() as f64;
        }
        assert!((feature_matching_loss(&a, &b).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn total_loss_values() {
        let w = LossWeights::default();
        assert_eq!(total_loss(0.0, 0.0, 0.0, &w), 0.0);
        assert_eq!(total_loss(1.0, 1.0, 1.0, &w), 31.0);
        assert!((total_loss(0.5, 0.2, 0.3, &w) - 12.3).abs() < 1e-12);
        assert!(LossWeights::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn losses_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..100 {
            let s: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let t: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            assert!(lsgan_d_loss(&s, &t).unwrap() >= 0.0);
            assert!(lsgan_g_loss(&s).unwrap() >= 0.0);
            let fm = feature_matching_loss(&[FeatureTensor::flat(s)], &[FeatureTensor::flat(t)]);
            assert!(fm.unwrap() >= 0.0);
        }
    }

    #[test]
    fn subgradient_at_zero_is_zero() {
        let pts: Vec<Point2> = vec![Point2::new(1.0, 1.0); 16];
        let g = l_point_grad(std::slice::from_ref(&pts), &[label(&pts)]).unwrap();
        assert!(g[0].iter().all(|v| *v == [0.0, 0.0]));
    }
}
