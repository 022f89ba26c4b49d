use super::image::{FlowMap, Image};
use crate::error::{Error, Result};

/// Samples `plane` (row-major, `height × width`) at a continuous position,
/// clamping the position to the border first.
fn sample_bilinear(plane: &[f64], height: usize, width: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = (1.0 - fx) * plane[y0 * width + x0] + fx * plane[y0 * width + x1];
    let bottom = (1.0 - fx) * plane[y1 * width + x0] + fx * plane[y1 * width + x1];
    (1.0 - fy) * top + fy * bottom
}

/// Backward-warps each channel plane; no range clamping of the values.
pub fn warp_planes(planes: &[Vec<f64>], flow: &FlowMap) -> Vec<Vec<f64>> {
    let (h, w) = flow.dims();
    planes
        .iter()
        .map(|plane| {
            debug_assert_eq!(plane.len(), h * w);
            flow.vectors()
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    let (x, y) = ((i % w) as f64, (i / w) as f64);
                    sample_bilinear(plane, h, w, x + d[0], y + d[1])
                })
                .collect()
        })
        .collect()
}

pub fn warp_bilinear(src: &Image, flow: &FlowMap) -> Result<Image> {
    if src.dims() != flow.dims() {
        return Err(Error::invalid(format!(
            "flow dims {:?} do not match image dims {:?}",
            flow.dims(),
            src.dims()
        )));
    }
    let planes = warp_planes(&src.planes(), flow);
    Image::from_planes(src.height(), src.width(), &planes)
}
