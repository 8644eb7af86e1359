//! Conditional Gaussian model for latents, convolved with a unit uniform.

use std::f64::consts::LN_2;
use std::rc::Rc;

use super::normal::{interval_mass, rect_mass, rect_mass_grad, std_pdf};
use crate::error::{Error, Result};
use crate::nn::Var;
use crate::transforms::{GaussianParams, Latent, SIGMA_MIN};

/// Masses below this are clamped before taking logs in the loss.
pub const LIKELIHOOD_FLOOR: f64 = 1e-12;

/// Above this scale the bin entropy is taken from the differential entropy.
const ENTROPY_SUM_MAX_SIGMA: f64 = 8.0;

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= SIGMA_MIN) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("sigma {sigma} below minimum {SIGMA_MIN}")));
    }
    Ok(())
}

/// Mass of `[t − ½, t + ½]` under `N(mu, sigma²)`.
pub fn latent_bin_pmf(t: f64, mu: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(bin_mass(t, mu, sigma))
}

pub(crate) fn bin_mass(t: f64, mu: f64, sigma: f64) -> f64 {
    interval_mass((t - 0.5 - mu) / sigma, (t + 0.5 - mu) / sigma)
}

/// `−log2` of the convolved density at `y`, floored like the loss.
pub fn element_bits(y: f64, mu: f64, sigma: f64) -> f64 {
    -bin_mass(y, mu, sigma).max(LIKELIHOOD_FLOOR).log2()
}

/// Expected code length in bits of `round(Y)` for `Y ~ N(mu, sigma²)`.
pub fn expected_bits(mu: f64, sigma: f64) -> f64 {
    if sigma > ENTROPY_SUM_MAX_SIGMA {
        return 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma * sigma).log2();
    }
    let center = mu.round();
    let span = (10.0 * sigma).ceil() + 2.0;
    let mut h = 0.0;
    let mut t = center - span;
    while t <= center + span {
        let p = bin_mass(t, mu, sigma);
        if p > 0.0 {
            h -= p * p.log2();
        }
        t += 1.0;
    }
    h
}

/// Per-token and total bits of a latent under its Gaussian parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRate {
    /// Bits per token, summed over channels (length `l`).
    pub token_bits: Vec<f64>,
    pub total_bits: f64,
}

/// Evaluates the rate of `y` (relaxed or already rounded) element by element.
pub fn latent_rate_bits(y: &Latent, params: &GaussianParams) -> Result<LatentRate> {
    if !y.0.same_dims(&params.mu) || !y.0.same_dims(&params.sigma) {
        return Err(Error::Shape(format!(
            "latent {:?} vs params {:?}/{:?}",
            y.0.dims(),
            params.mu.dims(),
            params.sigma.dims()
        )));
    }
    let c = y.0.c;
    let mut token_bits = Vec::with_capacity(y.tokens());
    for ((yt, mt), st) in y
        .0
        .data
        .chunks(c)
        .zip(params.mu.data.chunks(c))
        .zip(params.sigma.data.chunks(c))
    {
        let mut bits = 0.0;
        for i in 0..c {
            check_sigma(st[i])?;
            bits += element_bits(yt[i], mt[i], st[i]);
        }
        token_bits.push(bits);
    }
    let total_bits = token_bits.iter().sum();
    Ok(LatentRate { token_bits, total_bits })
}

/// Element-wise `Φ(b) − Φ(a)` as a graph node.
pub fn interval_mass_var(a: &Var, b: &Var) -> Var {
    assert_eq!(a.shape(), b.shape());
    let out: Vec<f64> = a.data().iter().zip(b.data()).map(|(&a, &b)| interval_mass(a, b)).collect();
    let (ad, bd) = (a.data_rc(), b.data_rc());
    Var::from_op(a.shape().to_vec(), Rc::new(out), &[a, b], move |g| {
        let ga = g.iter().zip(ad.iter()).map(|(g, &a)| -g * std_pdf(a)).collect();
        let gb = g.iter().zip(bd.iter()).map(|(g, &b)| g * std_pdf(b)).collect();
        vec![Some(ga), Some(gb)]
    })
}

/// Element-wise standard bivariate normal rectangle mass as a graph node.
pub fn rect_mass_var(a1: &Var, b1: &Var, a2: &Var, b2: &Var, r: &Var) -> Var {
    let n = a1.len();
    for v in [b1, a2, b2, r] {
        assert_eq!(v.len(), n);
    }
    let vals: Vec<[f64; 5]> = (0..n)
        .map(|i| [a1.data()[i], b1.data()[i], a2.data()[i], b2.data()[i], r.data()[i]])
        .collect();
    let out: Vec<f64> = vals.iter().map(|v| rect_mass(v[0], v[1], v[2], v[3], v[4])).collect();
    Var::from_op(a1.shape().to_vec(), Rc::new(out), &[a1, b1, a2, b2, r], move |g| {
        let mut grads = vec![vec![0.0; n]; 5];
        for (i, v) in vals.iter().enumerate() {
            let d = rect_mass_grad(v[0], v[1], v[2], v[3], v[4]);
            for k in 0..5 {
                grads[k][i] = g[i] * d[k];
            }
        }
        grads.into_iter().map(Some).collect()
    })
}

/// `−log2(max(p, LIKELIHOOD_FLOOR))` element-wise.
pub fn bits_var(p: &Var) -> Var {
    p.clamp_min(LIKELIHOOD_FLOOR).ln().scale(-1.0 / LN_2)
}

/// Differentiable per-element bits of `y` under `N(mu, sigma²) ∗ U(−½, ½)`.
pub fn gaussian_bits_var(y: &Var, mu: &Var, sigma: &Var) -> Var {
    let d = y.sub(mu);
    let a = d.add_scalar(-0.5).div(sigma);
    let b = d.add_scalar(0.5).div(sigma);
    bits_var(&interval_mass_var(&a, &b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::nn::gradcheck;

    #[test]
    fn central_bin_value() {
        let p = latent_bin_pmf(0.0, 0.0, 1.0).unwrap();
        assert!((p - 0.382_924_922_548_026).abs() < 1e-12);
        assert!((-p.log2() - 1.384_866_534_290_99).abs() < 1e-12);
    }

    #[test]
    fn rejects_tiny_sigma() {
        assert!(matches!(latent_bin_pmf(0.0, 0.0, 1e-9), Err(Error::Parameter(_))));
        assert!(latent_bin_pmf(0.0, 0.0, SIGMA_MIN).is_ok());
    }

    #[test]
    fn concentrated_mass_in_nearest_bin() {
        let p = latent_bin_pmf(2.0, 2.3, SIGMA_MIN).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        assert!(latent_bin_pmf(3.0, 2.3, SIGMA_MIN).unwrap() < 1e-300);
    }

    #[test]
    fn bins_sum_to_one() {
        let s: f64 = (-50..=50).map(|t| latent_bin_pmf(t as f64, 0.0, 1.0).unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rate_per_token_partitions_total() {
        let (h, w, c) = (2, 3, 4);
        let n = h * w * c;
        let y = Latent(Grid::new(h, w, c, (0..n).map(|i| (i % 5) as f64 - 2.0).collect()).unwrap());
        let params = GaussianParams {
            mu: y.0.clone(),
            sigma: Grid::new(h, w, c, vec![1.0; n]).unwrap(),
        };
        let r = latent_rate_bits(&y, &params).unwrap();
        assert_eq!(r.token_bits.len(), h * w);
        let per = -latent_bin_pmf(0.0, 0.0, 1.0).unwrap().log2();
        assert!((r.total_bits - n as f64 * per).abs() < 1e-9);
        assert_eq!(r.total_bits, r.token_bits.iter().sum::<f64>());

        let wide = GaussianParams {
            mu: params.mu.clone(),
            sigma: Grid::new(h, w, c, vec![2.0; n]).unwrap(),
        };
        assert!(latent_rate_bits(&y, &wide).unwrap().total_bits > r.total_bits);
    }

    #[test]
    fn expected_bits_branches_agree_near_switch() {
        let summed = {
            let mut h = 0.0;
            for t in -200..=200 {
                let p = bin_mass(t as f64, 0.3, 8.5);
                h -= p * p.log2();
            }
            h
        };
        assert!((expected_bits(0.3, 8.5) - summed).abs() < 1e-3);
        assert!(expected_bits(0.0, SIGMA_MIN) < 1e-9);
    }

    #[test]
    fn gaussian_bits_gradients() {
        let n = 12;
        let y: Vec<f64> = (0..n).map(|i| 0.37 * i as f64 - 2.0).collect();
        let mu: Vec<f64> = (0..n).map(|i| 0.21 * (i as f64).sin()).collect();
        let sigma: Vec<f64> = (0..n).map(|i| 0.3 + 0.25 * i as f64).collect();
        let gc = gradcheck::check(
            |v| gaussian_bits_var(&v[0], &v[1], &v[2]).sum(),
            &[(vec![n], y), (vec![n], mu), (vec![n], sigma)],
            36,
            1e-6,
            1e-6,
        );
        assert_eq!(gc.checked, 36);
        assert!(gc.max_rel_err < 1e-5, "{gc:?}");
    }
}
