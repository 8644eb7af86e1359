//! Rounding and the additive-uniform relaxation used in training.

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// An integer grid of quantized symbols, shaped like the [`Grid`] it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntGrid {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<i64>,
}

impl IntGrid {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<i64>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::Shape(format!("int grid {h}x{w}x{c} with {} values", data.len())));
        }
        Ok(IntGrid { h, w, c, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_grid(&self) -> Grid {
        Grid {
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }
}

/// Nearest integer, halves away from zero.
pub fn round_half_away(v: f64) -> f64 {
    v.round()
}

/// Element-wise rounding of a real grid.
pub fn quantize(y: &Grid) -> Result<IntGrid> {
    let mut data = Vec::with_capacity(y.len());
    for (i, &v) in y.data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Input(format!("cannot quantize non-finite value at index {i}")));
        }
        if v.abs() >= 9.0e18 {
            return Err(Error::Input(format!("value {v} at index {i} exceeds the integer range")));
        }
        data.push(round_half_away(v) as i64);
    }
    IntGrid::new(y.h, y.w, y.c, data)
}

/// Draws `n` samples of `U(−½, ½)` (open interval).
pub fn uniform_noise<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(Open01) - 0.5).collect()
}

/// `y + u` with `u ~ U(−½, ½)` i.i.d.
pub fn relax<R: Rng>(y: &Grid, rng: &mut R) -> Grid {
    let noise = uniform_noise(y.len(), rng);
    Grid {
        h: y.h,
        w: y.w,
        c: y.c,
        data: y.data.iter().zip(noise).map(|(a, u)| a + u).collect(),
    }
}
