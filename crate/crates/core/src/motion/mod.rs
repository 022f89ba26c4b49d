//! Motion-guided reconstruction of non-key frames.
//!
//! Target frames are produced by backward-warping the decoded key frame along
//! a dense flow map estimated from the key and target keypoints, either by
//! Gaussian interpolation of the sparse displacements or by a small U-Net.

mod flow;
mod image;
mod synth;
mod unet;
mod warp;
mod weights;

pub use flow::{analytic_flow_from_keypoints, default_sigma_interp};
pub use image::{FlowMap, Image};
pub use synth::{difference_heatmaps, synthesize_frame, LearnedModel, SynthesisBackend};
pub use unet::{unet_forward, FeatureMap, UNet};
pub use warp::{warp_bilinear, warp_planes};
pub use weights::{Tensor, ToyUNetSpec, WeightBundle, WEIGHTS_MAGIC, WEIGHTS_VERSION};
