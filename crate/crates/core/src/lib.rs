//! Scalable two-layer codec for keypoint features and video.
//!
//! The feature layer carries per-frame keypoints (position and covariance)
//! and decodes on its own for machine analysis. The key-frame layer adds the
//! appearance of the first frame, from which every other frame is synthesized
//! by warping along a flow field derived from the keypoints.

pub mod error;
pub mod grid;
pub mod keypoint;
pub mod loss;
pub mod motion;
pub mod pipeline;
mod wire;

pub use error::{Error, Result};
