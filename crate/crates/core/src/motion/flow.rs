use super::image::FlowMap;
use crate::error::{Error, Result};
use crate::keypoint::FrameKeypoints;

/// Below this total weight a pixel is treated as static background.
const MIN_TOTAL_WEIGHT: f64 = 1e-8;

/// 8 px at 64×64, scaled with the geometric mean of the dims.
pub fn default_sigma_interp(height: usize, width: usize) -> f64 {
    8.0 * ((height * width) as f64).sqrt() / 64.0
}

/// Dense backward flow from sparse keypoint correspondences.
///
/// Each pixel takes the Gaussian-weighted average of `key − target`
/// displacements, weighted by its distance to the target keypoints.
pub fn analytic_flow_from_keypoints(
    kps_key: &FrameKeypoints,
    kps_target: &FrameKeypoints,
    height: usize,
    width: usize,
    sigma_interp: f64,
) -> Result<FlowMap> {
    if kps_key.len() != kps_target.len() {
        return Err(Error::invalid(format!(
            "keypoint count mismatch: {} key vs {} target",
            kps_key.len(),
            kps_target.len()
        )));
    }
    if !(sigma_interp > 0.0 && sigma_interp.is_finite()) {
        return Err(Error::invalid(format!(
            "sigma_interp must be positive, got {sigma_interp}"
        )));
    }
    let pairs: Vec<_> = kps_target
        .positions()
        .zip(kps_key.positions())
        .map(|(t, k)| (t, [k.x - t.x, k.y - t.y]))
        .collect();
    let inv_two_var = 1.0 / (2.0 * sigma_interp * sigma_interp);

    let mut data = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let (mut total, mut acc) = (0.0, [0.0; 2]);
            for (t, d) in &pairs {
                let (ox, oy) = (x as f64 - t.x, y as f64 - t.y);
                let w = (-(ox * ox + oy * oy) * inv_two_var).exp();
                total += w;
                acc[0] += w * d[0];
                acc[1] += w * d[1];
            }
            if total < MIN_TOTAL_WEIGHT {
                data.push([0.0; 2]);
            } else {
                data.push([acc[0] / total, acc[1] / total]);
            }
        }
    }
    FlowMap::new(height, width, data)
}
