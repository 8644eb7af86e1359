//! Per-user rate bookkeeping.

use serde::{Deserialize, Serialize};

use super::gaussian::expected_bits;
use crate::error::{Error, Result};
use crate::transforms::{GaussianParams, Hyperprior};

/// Rate of one user's latent plus its share of the joint hyperprior cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub token_bits: Vec<f64>,
    pub latent_bits: f64,
    pub joint_hyper_bits: f64,
    pub total_bits: f64,
}

impl RateReport {
    pub fn new(token_bits: Vec<f64>, joint_hyper_bits: f64) -> Result<Self> {
        let latent_bits = token_bits.iter().sum();
        let total_bits = total_code_rate(latent_bits, joint_hyper_bits)?;
        Ok(RateReport {
            token_bits,
            latent_bits,
            joint_hyper_bits,
            total_bits,
        })
    }
}

/// `R_y + H(z̄1, z̄2) / 2`.
pub fn total_code_rate(latent_bits: f64, joint_hyper_bits: f64) -> Result<f64> {
    if !(latent_bits >= 0.0) || !(joint_hyper_bits >= 0.0) {
        return Err(Error::Parameter(format!(
            "rates must be nonnegative, got {latent_bits} and {joint_hyper_bits}"
        )));
    }
    Ok(latent_bits + joint_hyper_bits / 2.0)
}

/// Expected bits per token under `(mu, sigma)`, summed over channels.
pub fn expected_token_bits(params: &GaussianParams) -> Vec<f64> {
    let c = params.mu.c;
    params
        .mu
        .data
        .chunks(c)
        .zip(params.sigma.data.chunks(c))
        .map(|(m, s)| m.iter().zip(s).map(|(&m, &s)| expected_bits(m, s)).sum())
        .collect()
}

/// Estimated per-token bits of the peer, from its estimated hyperprior and
/// the peer's hyper synthesis.
pub fn peer_rate_estimate<F>(z_star: &Hyperprior, peer_synthesis: F) -> Result<Vec<f64>>
where
    F: FnOnce(&Hyperprior) -> Result<GaussianParams>,
{
    Ok(expected_token_bits(&peer_synthesis(z_star)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn total_rate_arithmetic() {
        assert_eq!(total_code_rate(1000.0, 200.0).unwrap(), 1100.0);
        assert_eq!(total_code_rate(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(total_code_rate(32268.0, 1000.0).unwrap(), 32768.0);
        assert!(total_code_rate(-1.0, 0.0).is_err());
    }

    #[test]
    fn report_sums_tokens() {
        let r = RateReport::new(vec![1.5, 2.5, 4.0], 6.0).unwrap();
        assert_eq!(r.latent_bits, 8.0);
        assert_eq!(r.total_bits, r.latent_bits + r.joint_hyper_bits / 2.0);
    }

    #[test]
    fn peer_estimate_grows_with_scale() {
        let z = Hyperprior(Grid::zeros(1, 1, 2));
        let stub = |scale: f64| {
            move |_: &Hyperprior| {
                Ok(GaussianParams {
                    mu: Grid::new(2, 2, 3, vec![0.25; 12])?,
                    sigma: Grid::new(2, 2, 3, (0..12).map(|i| scale * (0.2 + 0.3 * i as f64)).collect())?,
                })
            }
        };
        let small = peer_rate_estimate(&z, stub(1.0)).unwrap();
        let large = peer_rate_estimate(&z, stub(1.5)).unwrap();
        assert_eq!(small.len(), 4);
        for (a, b) in small.iter().zip(&large) {
            assert!(*a >= 0.0 && b > a);
        }
    }
}
