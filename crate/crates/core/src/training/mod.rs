//! Training objectives, distortion measures, the learning-rate schedule, the trainer
//! and hyperprior refitting.

pub mod distortion;
pub mod loss;
pub mod refit;
pub mod trainer;

pub use distortion::{distortion, ms_ssim, mse, DistortionKind};
pub use loss::{loss_ntsc, loss_ntscc, LossBreakdown, LossWeights};
pub use refit::{refit_hyper_model, RefitConfig};
pub use trainer::{train, LogRow, TrainConfig, TrainReport, TrainState};

use crate::error::{Error, Result};

/// Cosine annealing: `lr_final + ½(lr_init − lr_final)(1 + cos(tπ/N))`.
pub fn lr_schedule(t: usize, n: usize, lr_init: f64, lr_final: f64) -> Result<f64> {
    if t > n {
        return Err(Error::Parameter(format!("schedule step {t} beyond {n}")));
    }
    if n == 0 {
        return Ok(lr_init);
    }
    let phase = std::f64::consts::PI * t as f64 / n as f64;
    Ok(lr_final + 0.5 * (lr_init - lr_final) * (1.0 + phase.cos()))
}
