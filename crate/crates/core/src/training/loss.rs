//! The two training objectives, evaluated on noise-relaxed quantities.
//!
//! Rates enter the loss in bits per pixel of one view (bits divided by
//! `H·W`), so the distortion weights do not depend on the image size.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::distortion::{distortion_var, DistortionKind};
use crate::channel::{complex_noise, ChannelSpec};
use crate::coding::quant::uniform_noise;
use crate::entropy::gaussian::gaussian_bits_var;
use crate::entropy::{expected_token_bits, mmse_peer_estimate};
use crate::error::{Error, Result};
use crate::grid::{Grid, StereoPair};
use crate::jscc::{BandwidthSet, RatePlan};
use crate::model::Model;
use crate::nn::{Ctx, Var};
use crate::transforms::{GaussianParams, Hyperprior};

/// Distortion weights (`β` for D-NTSC, `α` for D-NTSCC) and the latent-rate weight `η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub eta: f64,
    pub distortion: DistortionKind,
}

impl LossWeights {
    pub fn symmetric(beta: f64, distortion: DistortionKind) -> Self {
        LossWeights {
            beta1: beta,
            beta2: beta,
            eta: 1.0,
            distortion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("eta", self.eta)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{n} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Unweighted loss ingredients of one pair, plus the weights applied to them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub distortion: [f64; 2],
    /// Latent rates in bits per pixel.
    pub rate_y: [f64; 2],
    /// Joint hyperprior rate in bits per pixel.
    pub rate_z_joint: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    /// Weighted terms in summation order.
    pub fn terms(&self) -> [(&'static str, f64); 5] {
        let w = &self.weights;
        [
            ("distortion1", w.beta1 * self.distortion[0]),
            ("distortion2", w.beta2 * self.distortion[1]),
            ("rate_y1", w.eta * self.rate_y[0]),
            ("rate_y2", w.eta * self.rate_y[1]),
            ("rate_z_joint", self.rate_z_joint),
        ]
    }

    pub fn total(&self) -> f64 {
        self.terms().iter().fold(0.0, |acc, (_, v)| acc + v)
    }

    pub fn describe(&self) -> String {
        self.terms()
            .iter()
            .map(|(n, v)| format!("{n}={v:.6e}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Everything one relaxed forward pass produced.
pub struct Forward {
    pub loss: Var,
    pub breakdown: LossBreakdown,
    /// Unclamped reconstructions.
    pub recon: [Var; 2],
    pub y_noise: [Vec<f64>; 2],
    pub z_noise: [Vec<f64>; 2],
    /// Channel noise as interleaved reals (channel pipeline only).
    pub channel_noise: Option<[Vec<f64>; 2]>,
}

fn relax_var(x: &Var, rng: &mut ChaCha8Rng) -> (Var, Vec<f64>) {
    let u = uniform_noise(x.len(), rng);
    (x.add(&Var::constant(x.shape(), u.clone())), u)
}

fn combine(weights: &LossWeights, d: [&Var; 2], ry: [&Var; 2], rz: &Var) -> Var {
    d[0].scale(weights.beta1)
        .add(&d[1].scale(weights.beta2))
        .add(&ry[0].scale(weights.eta))
        .add(&ry[1].scale(weights.eta))
        .add(rz)
}

struct Encoded {
    y: [Var; 2],
    y_tilde: [Var; 2],
    z_tilde: [Var; 2],
    params: [(Var, Var); 2],
    y_noise: [Vec<f64>; 2],
    z_noise: [Vec<f64>; 2],
    rate_y: [Var; 2],
    rate_z: Var,
}

fn encode_pair(model: &Model, ctx: &Ctx, pair: &StereoPair, rng: &mut ChaCha8Rng) -> Result<Encoded> {
    let (ih, iw) = (pair.view(0).height(), pair.view(0).width());
    model.cfg.transform.check_image_size(ih, iw)?;
    let pixels = (ih * iw) as f64;
    let mut y = Vec::new();
    let mut yt = Vec::new();
    let mut zt = Vec::new();
    let mut yn = Vec::new();
    let mut zn = Vec::new();
    let mut params = Vec::new();
    let mut ry = Vec::new();
    for u in 0..2 {
        let yi = model.analysis_var(ctx, u, pair.view(u));
        let zi = model.ha[u].forward_var(ctx, &yi);
        let (h, w) = (yi.shape()[0], yi.shape()[1]);
        let (y_t, ny) = relax_var(&yi, rng);
        let (z_t, nz) = relax_var(&zi, rng);
        let (mu, sigma) = model.hs[u].forward_var(ctx, &z_t, h, w);
        ry.push(gaussian_bits_var(&y_t, &mu, &sigma).sum().scale(1.0 / pixels));
        y.push(yi);
        yt.push(y_t);
        zt.push(z_t);
        yn.push(ny);
        zn.push(nz);
        params.push((mu, sigma));
    }
    let rate_z = model.gmm.bits_var(ctx, &zt[0], &zt[1]).sum().scale(1.0 / pixels);
    let two = |mut v: Vec<Var>| -> [Var; 2] {
        let b = v.pop().unwrap();
        [v.pop().unwrap(), b]
    };
    let two_f = |mut v: Vec<Vec<f64>>| -> [Vec<f64>; 2] {
        let b = v.pop().unwrap();
        [v.pop().unwrap(), b]
    };
    let p1 = params.pop().unwrap();
    let p0 = params.pop().unwrap();
    Ok(Encoded {
        y: two(y),
        y_tilde: two(yt),
        z_tilde: two(zt),
        params: [p0, p1],
        y_noise: two_f(yn),
        z_noise: two_f(zn),
        rate_y: two(ry),
        rate_z,
    })
}

fn decode_pair(model: &Model, ctx: &Ctx, latents: [&Var; 2]) -> Result<[Var; 2]> {
    let side = |main: &Var, peer: &Var| -> Result<Var> {
        if model.cfg.side_info {
            model.loc.align_var(ctx, main, peer)
        } else {
            Ok(Var::constant(main.shape(), vec![0.0; main.len()]))
        }
    };
    let s1 = side(latents[0], latents[1])?;
    let s2 = side(latents[1], latents[0])?;
    Ok([
        model.gs.forward_var(ctx, latents[0], &s1),
        model.gs.forward_var(ctx, latents[1], &s2),
    ])
}

fn finish(
    weights: &LossWeights,
    pair: &StereoPair,
    enc: Encoded,
    recon: [Var; 2],
    channel_noise: Option<[Vec<f64>; 2]>,
) -> Forward {
    let d: Vec<Var> = (0..2)
        .map(|u| distortion_var(&pair.view(u).grid().to_var(), &recon[u], weights.distortion))
        .collect();
    let loss = combine(weights, [&d[0], &d[1]], [&enc.rate_y[0], &enc.rate_y[1]], &enc.rate_z);
    let breakdown = LossBreakdown {
        distortion: [d[0].item(), d[1].item()],
        rate_y: [enc.rate_y[0].item(), enc.rate_y[1].item()],
        rate_z_joint: enc.rate_z.item(),
        weights: *weights,
    };
    Forward {
        loss,
        breakdown,
        recon,
        y_noise: enc.y_noise,
        z_noise: enc.z_noise,
        channel_noise,
    }
}

/// `β1·d1 + β2·d2 − log2 p(ỹ1|z̃1) − log2 p(ỹ2|z̃2) − log2 p(z̃1, z̃2)`.
pub fn loss_ntsc(
    model: &Model,
    ctx: &Ctx,
    pair: &StereoPair,
    weights: &LossWeights,
    rng: &mut ChaCha8Rng,
) -> Result<Forward> {
    let enc = encode_pair(model, ctx, pair, rng)?;
    let recon = decode_pair(model, ctx, [&enc.y_tilde[0], &enc.y_tilde[1]])?;
    Ok(finish(weights, pair, enc, recon, None))
}

fn params_of(mu: &Var, sigma: &Var) -> GaussianParams {
    GaussianParams {
        mu: Grid::from_var(mu),
        sigma: Grid::from_var(sigma),
    }
}

/// Transmit and receive plans for a relaxed pass, mirroring the inference rule.
fn training_plans(model: &Model, ctx: &Ctx, enc: &Encoded, eta: f64) -> Result<([RatePlan; 2], [RatePlan; 2])> {
    let set = BandwidthSet::new(model.cfg.bandwidths.clone())?;
    let joint = model.joint_model()?;
    let (h, w) = (enc.y[0].shape()[0], enc.y[0].shape()[1]);
    let own: Vec<Vec<f64>> = (0..2)
        .map(|u| expected_token_bits(&params_of(&enc.params[u].0, &enc.params[u].1)))
        .collect();
    let mut tx = Vec::new();
    let mut rx = Vec::new();
    for u in 0..2 {
        let peer = 1 - u;
        let z_star = mmse_peer_estimate(&Hyperprior(Grid::from_var(&enc.z_tilde[u])), u, &joint)?;
        let est = expected_token_bits(&model.hs[peer].forward(&Ctx::eval(ctx.store()), &z_star, h, w)?);
        tx.push(RatePlan::from_bits(&own[u], &est, eta, &set)?);
        rx.push(RatePlan::from_bits(&own[u], &own[peer], eta, &set)?);
    }
    let pair = |mut v: Vec<RatePlan>| -> [RatePlan; 2] {
        let b = v.pop().unwrap();
        [v.pop().unwrap(), b]
    };
    Ok((pair(tx), pair(rx)))
}

/// `α1·d1 + α2·d2 − η·log2 p(ỹ1|z̃1) − η·log2 p(ỹ2|z̃2) − log2 p(z̃1, z̃2)`,
/// with reconstructions decoded from the noisy channel output.
pub fn loss_ntscc(
    model: &Model,
    ctx: &Ctx,
    pair: &StereoPair,
    weights: &LossWeights,
    channel: &ChannelSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Forward> {
    let (fe, fd) = model
        .jscc
        .as_ref()
        .ok_or_else(|| Error::Config("the ntscc loss needs a model built for the ntscc pipeline".into()))?;
    let enc = encode_pair(model, ctx, pair, rng)?;
    let (tx, rx) = training_plans(model, ctx, &enc, model.cfg.eta)?;
    let mut y_hat = Vec::new();
    let mut noises = Vec::new();
    for u in 0..2 {
        let s = enc.y[u].shape().to_vec();
        let tokens = enc.y[u].reshape(&[s[0] * s[1], s[2]]);
        let sent = fe[u].encode_var(ctx, &tokens, &tx[u])?;
        let var = channel.noise_variance(u);
        let noise = if var == 0.0 {
            vec![0.0; sent.len()]
        } else {
            complex_noise(sent.len() / 2, var, rng)
        };
        let received = sent.add(&Var::constant(sent.shape(), noise.clone()));
        y_hat.push(fd[u].decode_var(ctx, &received, &rx[u])?.reshape(&s));
        noises.push(noise);
    }
    let recon = decode_pair(model, ctx, [&y_hat[0], &y_hat[1]])?;
    let n1 = noises.pop().unwrap();
    let n0 = noises.pop().unwrap();
    Ok(finish(weights, pair, enc, recon, Some([n0, n1])))
}

/// Draws a fresh generator for one training sample from a parent stream.
pub fn sample_rng(parent: &mut ChaCha8Rng) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(parent.random())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::gaussian::element_bits;
    use crate::grid::RgbImage;
    use crate::model::{ModelConfig, Pipeline};
    use crate::nn::gradcheck;
    use crate::training::distortion::mse;
    use crate::transforms::TransformConfig;
    use rand::SeedableRng;

    fn pair(h: usize, w: usize) -> StereoPair {
        let mk = |phase: f64| {
            let d = (0..h * w * 3)
                .map(|i| 0.5 + 0.3 * ((i / 3) as f64 * 0.21 + phase + (i % 3) as f64).sin())
                .collect();
            RgbImage::new(h, w, d).unwrap()
        };
        StereoPair::new(mk(0.0), mk(0.25)).unwrap()
    }

    fn weights(beta: f64) -> LossWeights {
        LossWeights::symmetric(beta, DistortionKind::Mse)
    }

    #[test]
    fn ntsc_components_recomputed_independently() {
        let model = Model::new(ModelConfig::new(Pipeline::Ntsc, TransformConfig::micro())).unwrap();
        let p = pair(16, 32);
        let ctx = Ctx::eval(&model.store);
        let f = loss_ntsc(&model, &ctx, &p, &weights(50.0), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(f.loss.item(), f.breakdown.total());

        // distortion through the plain-array metric
        for u in 0..2 {
            let d = mse(p.view(u).grid(), &Grid::from_var(&f.recon[u])).unwrap();
            assert!((d - f.breakdown.distortion[u]).abs() < 1e-12);
        }
        // latent rates through the scalar entropy model at the intercepted noise
        for u in 0..2 {
            let y = model.analyze(u, p.view(u)).unwrap().0;
            let z = model.analyze(u, p.view(u)).unwrap().1;
            let zt: Vec<f64> = z.0.data.iter().zip(&f.z_noise[u]).map(|(a, b)| a + b).collect();
            let params = model
                .latent_params(u, &Hyperprior(Grid::new(z.0.h, z.0.w, z.0.c, zt).unwrap()), y.0.h, y.0.w)
                .unwrap();
            let bits: f64 = y
                .0
                .data
                .iter()
                .zip(&f.y_noise[u])
                .enumerate()
                .map(|(i, (a, n))| element_bits(a + n, params.mu.data[i], params.sigma.data[i]))
                .sum();
            assert!((bits / 512.0 - f.breakdown.rate_y[u]).abs() < 1e-9, "{} vs {}", bits / 512.0, f.breakdown.rate_y[u]);
        }
        let sum: f64 = f.breakdown.terms().iter().map(|t| t.1).sum();
        assert!((sum - f.loss.item()).abs() < 1e-9);
    }

    #[test]
    fn zero_weights_leave_rate() {
        let model = Model::new(ModelConfig::new(Pipeline::Ntsc, TransformConfig::micro())).unwrap();
        let p = pair(16, 32);
        let ctx = Ctx::eval(&model.store);
        let mut w = weights(0.0);
        let f = loss_ntsc(&model, &ctx, &p, &w, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = &f.breakdown;
        assert_eq!(f.loss.item(), b.rate_y[0] + b.rate_y[1] + b.rate_z_joint);

        let model = Model::new(ModelConfig::new(Pipeline::Ntscc, TransformConfig::micro())).unwrap();
        let ctx = Ctx::eval(&model.store);
        w.eta = 0.0;
        let spec = ChannelSpec::new(5.0, 1.0, 0).unwrap();
        let f = loss_ntscc(&model, &ctx, &p, &w, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(f.loss.item(), f.breakdown.rate_z_joint);
    }

    #[test]
    fn noiseless_channel_adds_nothing() {
        let model = Model::new(ModelConfig::new(Pipeline::Ntscc, TransformConfig::micro())).unwrap();
        let p = pair(16, 32);
        let ctx = Ctx::eval(&model.store);
        let spec = ChannelSpec::new(f64::INFINITY, 1.0, 0).unwrap();
        let f = loss_ntscc(&model, &ctx, &p, &weights(10.0), &spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(f.channel_noise.unwrap().iter().flatten().all(|v| *v == 0.0));
        assert_eq!(f.loss.item(), f.breakdown.total());
    }

    fn probe(model: &Model, prefix: &str) -> (String, Vec<usize>, Vec<f64>) {
        let (name, p) = model
            .store
            .iter()
            .find(|(k, p)| k.starts_with(prefix) && p.data.len() >= 8)
            .unwrap();
        (name.clone(), p.shape.clone(), p.data.clone())
    }

    fn check_loss_gradient(pipeline: Pipeline, prefix: &str) {
        let mut model = Model::new(ModelConfig::new(pipeline, TransformConfig::micro())).unwrap();
        // fractional translation keeps bilinear samples off the integer lattice, where it has kinks
        let b = &mut model.store.get_mut("loc.fc2.bias").unwrap().data;
        b[2] += 0.37;
        b[5] -= 0.21;
        // the decoder output layer starts at zero, which would hide every upstream gradient
        for (i, v) in model.store.get_mut("gs.out.weight").unwrap().data.iter_mut().enumerate() {
            *v = 0.3 * (i as f64 * 0.7).sin();
        }
        let p = pair(16, 32);
        let spec = ChannelSpec::new(5.0, 1.0, 0).unwrap();
        let (name, shape, data) = probe(&model, prefix);
        let gc = gradcheck::check(
            |v| {
                let ctx = Ctx::eval(&model.store);
                ctx.seed(&name, &v[0]);
                let mut rng = ChaCha8Rng::seed_from_u64(5);
                match pipeline {
                    Pipeline::Ntsc => loss_ntsc(&model, &ctx, &p, &weights(20.0), &mut rng),
                    Pipeline::Ntscc => loss_ntscc(&model, &ctx, &p, &weights(20.0), &spec, &mut rng),
                }
                .unwrap()
                .loss
            },
            &[(shape, data)],
            12,
            1e-6,
            1e-4,
        );
        assert!(gc.max_rel_err < 1e-3, "{name}: {gc:?}");
        assert!(gc.max_abs_grad > 1e-6, "{name}: vanishing gradient");
    }

    #[test]
    fn ntsc_gradient_matches_finite_differences() {
        check_loss_gradient(Pipeline::Ntsc, "ga1.stage3");
        check_loss_gradient(Pipeline::Ntsc, "loc.fc2");
    }

    #[test]
    fn ntscc_gradient_matches_finite_differences() {
        check_loss_gradient(Pipeline::Ntscc, "fe1.block");
    }
}
