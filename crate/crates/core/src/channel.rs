//! Complex AWGN channel and its Shannon capacity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Var;

/// Symbols as interleaved `(re, im)` pairs, grouped per token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelVector {
    /// `2n` reals: `re0, im0, re1, im1, …`.
    pub reals: Vec<f64>,
    /// Complex symbols per token (`k_j / 2`).
    pub segments: Vec<usize>,
    pub power: f64,
}

impl ChannelVector {
    pub fn new(reals: Vec<f64>, segments: Vec<usize>, power: f64) -> Result<Self> {
        let n: usize = segments.iter().sum();
        if reals.len() != 2 * n {
            return Err(Error::Framing(format!(
                "{} reals for {n} complex symbols across {} segments",
                reals.len(),
                segments.len()
            )));
        }
        Ok(ChannelVector { reals, segments, power })
    }

    /// Complex channel uses `n`.
    pub fn uses(&self) -> usize {
        self.reals.len() / 2
    }

    /// `mean |s|²` over complex symbols.
    pub fn mean_power(&self) -> f64 {
        if self.reals.is_empty() {
            return 0.0;
        }
        self.reals.iter().map(|v| v * v).sum::<f64>() / self.uses() as f64
    }

    /// Reals belonging to token `j`.
    pub fn segment(&self, j: usize) -> &[f64] {
        let start: usize = self.segments[..j].iter().sum::<usize>() * 2;
        &self.reals[start..start + 2 * self.segments[j]]
    }
}

/// Channel configuration shared by both users unless overridden.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    /// `f64::INFINITY` selects the noiseless channel.
    pub snr_db: f64,
    pub power: f64,
    pub seed: u64,
    /// Optional per-user SNR in dB.
    pub user_snr_db: Option<[f64; 2]>,
}

impl ChannelSpec {
    pub fn new(snr_db: f64, power: f64, seed: u64) -> Result<Self> {
        let spec = ChannelSpec {
            snr_db,
            power,
            seed,
            user_snr_db: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power > 0.0) || !self.power.is_finite() {
            return Err(Error::Config(format!("channel power must be positive, got {}", self.power)));
        }
        let snrs = self.user_snr_db.map_or(vec![self.snr_db], |s| s.to_vec());
        if snrs.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return Err(Error::Config(format!("invalid SNR {snrs:?}")));
        }
        Ok(())
    }

    pub fn snr_db_for(&self, user: usize) -> f64 {
        self.user_snr_db.map_or(self.snr_db, |s| s[user])
    }

    /// `ε² = P · 10^(−snr/10)`, zero for the noiseless channel.
    pub fn noise_variance(&self, user: usize) -> f64 {
        let snr = self.snr_db_for(user);
        if snr == f64::INFINITY {
            0.0
        } else {
            self.power * 10f64.powf(-snr / 10.0)
        }
    }

    /// Independent noise stream for `(user, draw)`.
    pub fn rng(&self, user: usize, draw: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ draw.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(user as u64 + 1);
        rng
    }
}

/// `log2(1 + 10^(snr/10))` bits per complex channel use.
pub fn capacity(snr_db: f64) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(Error::Parameter(format!("capacity needs a finite SNR, got {snr_db}")));
    }
    Ok((10f64.powf(snr_db / 10.0)).ln_1p() / std::f64::consts::LN_2)
}

/// Circularly symmetric noise with `E|n|² = variance`, as `2n` reals.
pub fn complex_noise(n: usize, variance: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sd = (variance / 2.0).sqrt();
    (0..2 * n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        })
        .collect()
}

/// `ŝ = s + n` for one user.
pub fn awgn_transmit(s: &ChannelVector, spec: &ChannelSpec, user: usize, rng: &mut ChaCha8Rng) -> ChannelVector {
    let var = spec.noise_variance(user);
    if var == 0.0 {
        return s.clone();
    }
    let noise = complex_noise(s.uses(), var, rng);
    ChannelVector {
        reals: s.reals.iter().zip(noise).map(|(a, b)| a + b).collect(),
        segments: s.segments.clone(),
        power: s.power,
    }
}

/// The channel as a graph node: adds a constant noise draw, so gradients pass unchanged.
pub fn awgn_var(s: &Var, spec: &ChannelSpec, user: usize, rng: &mut ChaCha8Rng) -> Var {
    let var = spec.noise_variance(user);
    if var == 0.0 {
        return s.clone();
    }
    let noise = complex_noise(s.len() / 2, var, rng);
    s.add(&Var::constant(s.shape(), noise))
}
