//! Image quality and rate metrics.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::training::distortion::mse;

/// Reported PSNR for exact reconstructions.
pub const PSNR_CAP_DB: f64 = 100.0;

/// `10·log10(1 / MSE)` on `[0, 1]` images, capped at 100 dB.
pub fn psnr(x: &Grid, x_hat: &Grid) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, x_hat)?))
}

pub fn psnr_from_mse(m: f64) -> f64 {
    if m <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB)
}

/// `R / (H·W)`.
pub fn bitrate_bpp(total_bits: f64, h: usize, w: usize) -> Result<f64> {
    if h == 0 || w == 0 {
        return Err(Error::Parameter(format!("image dimensions must be positive, got {h}x{w}")));
    }
    Ok(total_bits / (h * w) as f64)
}
