use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Minimum distance from an L1 kink for a point to be checkable.
pub const KINK_MARGIN: f64 = 1e-3;

/// Largest relative error between `analytic` and central finite differences
/// of `loss` at `inputs`.
///
/// `kink_offsets` are the quantities whose sign flips at a kink of the loss
/// (for L1 terms, the differences being penalized); each must exceed
/// [`KINK_MARGIN`] in magnitude.
pub fn grad_check(
    loss: impl Fn(&[f64]) -> f64,
    inputs: &[f64],
    analytic: &[f64],
    kink_offsets: &[f64],
) -> Result<f64> {
    if inputs.len() != analytic.len() {
        return Err(Error::invalid(format!(
            "{} inputs but {} gradient entries",
            inputs.len(),
            analytic.len()
        )));
    }
    if let Some(v) = kink_offsets.iter().find(|v| v.abs() <= KINK_MARGIN) {
        return Err(Error::Precondition(format!(
            "evaluation point is within {KINK_MARGIN} of a kink (offset {v})"
        )));
    }
    let mut x = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let up = loss(&x);
        x[i] = orig - FD_STEP;
        let down = loss(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    Ok(worst)
}
