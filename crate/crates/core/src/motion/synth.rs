use std::sync::Arc;

use super::flow::{analytic_flow_from_keypoints, default_sigma_interp};
use super::image::{FlowMap, Image};
use super::unet::{FeatureMap, UNet};
use super::warp::{warp_bilinear, warp_planes};
use super::weights::WeightBundle;
use crate::error::{Error, Result};
use crate::grid::{diff_heatmaps, gaussian_heatmap, GeneratedHeatmap, DEFAULT_ALPHA};
use crate::keypoint::FrameKeypoints;

/// Networks of the learned backend.
///
/// `flow.*` maps the key frame plus difference heatmaps to an absolute flow
/// map. `refine.*`, when present, re-renders the frame from key-frame
/// features warped at every level, with the difference heatmaps appended at
/// the bottleneck.
#[derive(Debug, Clone)]
pub struct LearnedModel {
    flow: UNet,
    refine: Option<UNet>,
    image_channels: usize,
    points: usize,
}

impl LearnedModel {
    pub fn from_bundle(
        bundle: &WeightBundle,
        image_channels: usize,
        points: usize,
    ) -> Result<Self> {
        let flow = UNet::from_bundle(bundle, "flow.", 0)?;
        if flow.in_channels() != image_channels + points || flow.out_channels() != 2 {
            return Err(Error::InvalidWeights(format!(
                "flow net maps {} -> {} channels, expected {} -> 2",
                flow.in_channels(),
                flow.out_channels(),
                image_channels + points
            )));
        }
        let refine = if bundle.contains("refine.out.weight") {
            let net = UNet::from_bundle(bundle, "refine.", points)?;
            if net.in_channels() != image_channels || net.out_channels() != image_channels {
                return Err(Error::InvalidWeights(format!(
                    "refine net maps {} -> {} channels, expected {image_channels} -> {image_channels}",
                    net.in_channels(),
                    net.out_channels()
                )));
            }
            Some(net)
        } else {
            None
        };
        Ok(Self {
            flow,
            refine,
            image_channels,
            points,
        })
    }

    pub fn has_refinement(&self) -> bool {
        self.refine.is_some()
    }
}

#[derive(Debug, Clone)]
pub enum SynthesisBackend {
    /// Gaussian-interpolated keypoint flow; `None` picks the size-scaled default bandwidth.
    Analytic {
        sigma_interp: Option<f64>,
    },
    Learned(Arc<LearnedModel>),
}

impl Default for SynthesisBackend {
    fn default() -> Self {
        SynthesisBackend::Analytic { sigma_interp: None }
    }
}

impl SynthesisBackend {
    pub fn analytic(sigma_interp: f64) -> Self {
        SynthesisBackend::Analytic {
            sigma_interp: Some(sigma_interp),
        }
    }

    pub fn learned(bundle: &WeightBundle, image_channels: usize, points: usize) -> Result<Self> {
        Ok(SynthesisBackend::Learned(Arc::new(
            LearnedModel::from_bundle(bundle, image_channels, points)?,
        )))
    }

    pub fn name(&self) -> &'static str {
        match self {
            SynthesisBackend::Analytic { .. } => "analytic",
            SynthesisBackend::Learned(_) => "learned",
        }
    }
}

fn regenerate(kps: &FrameKeypoints, height: usize, width: usize) -> Result<Vec<GeneratedHeatmap>> {
    kps.points
        .iter()
        .map(|k| gaussian_heatmap(k.position, k.covariance, DEFAULT_ALPHA, height, width))
        .collect()
}

/// Difference heatmaps `target − key` as a feature map, one channel per keypoint.
pub fn difference_heatmaps(
    kps_key: &FrameKeypoints,
    kps_target: &FrameKeypoints,
    height: usize,
    width: usize,
) -> Result<FeatureMap> {
    let key = regenerate(kps_key, height, width)?;
    let target = regenerate(kps_target, height, width)?;
    let diff = diff_heatmaps(&target, &key)?;
    FeatureMap::from_planes(
        height,
        width,
        diff.into_iter().map(|g| g.values().to_vec()).collect(),
    )
}

fn learned_frame(
    model: &LearnedModel,
    key_frame: &Image,
    kps_key: &FrameKeypoints,
    kps_target: &FrameKeypoints,
) -> Result<Image> {
    let (h, w) = key_frame.dims();
    if key_frame.channels() != model.image_channels || kps_key.len() != model.points {
        return Err(Error::invalid(format!(
            "learned backend expects {} channels and {} keypoints, got {} and {}",
            model.image_channels,
            model.points,
            key_frame.channels(),
            kps_key.len()
        )));
    }
    let delta = difference_heatmaps(kps_key, kps_target, h, w)?;
    let key = FeatureMap::from_planes(h, w, key_frame.planes())?;
    let flow_out = model.flow.forward(&key.concat(&delta)?)?;
    let flow = FlowMap::new(
        h,
        w,
        flow_out
            .plane(0)
            .iter()
            .zip(flow_out.plane(1))
            .map(|(&dx, &dy)| [dx, dy])
            .collect(),
    )?;
    let Some(refine) = &model.refine else {
        return warp_bilinear(key_frame, &flow);
    };

    // Flow at each pyramid level, finest first.
    let mut flows = vec![flow];
    for _ in 0..refine.depth() {
        let next = flows.last().expect("non-empty").downsample2()?;
        flows.push(next);
    }
    let mut deform = |level: usize, f: FeatureMap| -> Result<FeatureMap> {
        let (fh, fw) = (f.height(), f.width());
        FeatureMap::from_planes(fh, fw, warp_planes(&f.planes(), &flows[level]))
    };
    let out = refine.forward_with(&key, &mut deform, Some(&delta))?;
    Image::from_planes(h, w, &out.planes())
}

/// Renders the target frame from the key frame and both keypoint sets.
pub fn synthesize_frame(
    key_frame: &Image,
    kps_key: &FrameKeypoints,
    kps_target: &FrameKeypoints,
    backend: &SynthesisBackend,
) -> Result<Image> {
    if kps_key.len() != kps_target.len() {
        return Err(Error::invalid(format!(
            "keypoint count mismatch: {} key vs {} target",
            kps_key.len(),
            kps_target.len()
        )));
    }
    let (h, w) = key_frame.dims();
    match backend {
        SynthesisBackend::Analytic { sigma_interp } => {
            let sigma = sigma_interp.unwrap_or_else(|| default_sigma_interp(h, w));
            let flow = analytic_flow_from_keypoints(kps_key, kps_target, h, w, sigma)?;
            warp_bilinear(key_frame, &flow)
        }
        SynthesisBackend::Learned(model) => learned_frame(model, key_frame, kps_key, kps_target),
    }
}
