use super::TfGrid;
use crate::error::{Error, Result};

/// Power floor under the logarithm.
pub const LOG_FLOOR: f32 = 1e-10;

fn check_shapes(a: &TfGrid, b: &TfGrid, what: &str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "{what}: {}x{} vs {}x{}",
            a.frames(),
            a.bands(),
            b.frames(),
            b.bands()
        )));
    }
    Ok(())
}

/// Rectified power-ratio mask `min(sqrt(S / X), 1)` per bin.
///
/// At `X == 0` the limit convention applies: 1 if `S > 0`, else 0.
pub fn mel_prm(clean: &TfGrid, noisy: &TfGrid) -> Result<TfGrid> {
    check_shapes(clean, noisy, "mel_prm")?;
    let values = clean
        .values()
        .iter()
        .zip(noisy.values())
        .map(|(&s, &x)| prm(s, x))
        .collect();
    TfGrid::new(clean.frames(), clean.bands(), values)
}

#[inline]
pub(crate) fn prm(s: f32, x: f32) -> f32 {
    if x > 0.0 {
        (s / x).sqrt().min(1.0)
    } else if s > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `ln(max(mask² · X, floor))`: the enhanced log power.
pub fn apply_mask(noisy: &TfGrid, mask: &TfGrid) -> Result<TfGrid> {
    check_shapes(noisy, mask, "apply_mask")?;
    let values = noisy
        .values()
        .iter()
        .zip(mask.values())
        .map(|(&x, &m)| masked_log(x, m))
        .collect();
    TfGrid::new(noisy.frames(), noisy.bands(), values)
}

#[inline]
pub(crate) fn masked_log(x: f32, m: f32) -> f32 {
    ((m * m * x).max(LOG_FLOOR) as f64).ln() as f32
}

/// Mean squared error over all bins.
pub fn mask_mse(pred: &TfGrid, target: &TfGrid) -> Result<f64> {
    check_shapes(pred, target, "mask_mse")?;
    let n = pred.values().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / n as f64)
}
