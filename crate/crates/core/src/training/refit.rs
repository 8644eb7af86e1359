//! Refitting the hyperprior mixture of a trained model with its transforms frozen.
//!
//! Only `gmm.*` parameters move, so reconstructions are unchanged and two refits
//! (joint and factorized) can be compared at exactly the same distortion.

use crate::coding::quantize;
use crate::error::{Error, Result};
use crate::grid::StereoPair;
use crate::model::Model;
use crate::nn::{Adam, Ctx, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefitConfig {
    pub steps: usize,
    pub lr: f64,
    /// Replace the pair density by the product of its marginals.
    pub independent: bool,
}

impl Default for RefitConfig {
    fn default() -> Self {
        RefitConfig {
            steps: 400,
            lr: 2e-2,
            independent: false,
        }
    }
}

/// Quantized hyperpriors of every pair, stacked as `(n·h·w, 1, C)` per user.
fn hyper_data(model: &Model, pairs: &[StereoPair]) -> Result<[(Vec<usize>, Vec<f64>); 2]> {
    let mut out = [Vec::new(), Vec::new()];
    let mut c = 0;
    for pair in pairs {
        for (u, buf) in out.iter_mut().enumerate() {
            let (_, z) = model.analyze(u, pair.view(u))?;
            c = z.0.c;
            buf.extend(quantize(&z.0)?.to_grid().data);
        }
    }
    let rows = out[0].len() / c.max(1);
    let [a, b] = out;
    Ok([(vec![rows, 1, c], a), (vec![rows, 1, c], b)])
}

/// Returns a copy of `model` whose mixture maximizes the likelihood of the
/// quantized training hyperpriors, plus the final mean joint bits per pair.
pub fn refit_hyper_model(model: &Model, pairs: &[StereoPair], cfg: &RefitConfig) -> Result<(Model, f64)> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("refit needs at least one pair".into()));
    }
    let mut mc = model.cfg.clone();
    mc.independent = cfg.independent;
    let mut out = Model::with_store(mc, model.store.clone())?;
    let [(s1, z1), (s2, z2)] = hyper_data(model, pairs)?;
    let scale = 1.0 / pairs.len() as f64;
    let mut adam = Adam::default();
    let mut last = f64::NAN;
    for step in 0..=cfg.steps {
        let ctx = Ctx::train_filtered(&out.store, |k| k.starts_with("gmm."));
        let bits = out.gmm.bits_var(&ctx, &Var::constant(&s1, z1.clone()), &Var::constant(&s2, z2.clone()));
        let loss = bits.sum().scale(scale);
        last = loss.item();
        if step == cfg.steps {
            break;
        }
        loss.backward();
        let grads = ctx.grads();
        drop(ctx);
        adam.update(&mut out.store, &grads, cfg.lr);
    }
    Ok((out, last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::joint_hyper_entropy_bits;
    use crate::harness::synth::{synth_pairs, SynthConfig};
    use crate::model::{ModelConfig, Pipeline};
    use crate::transforms::{Hyperprior, TransformConfig};

    #[test]
    fn refit_lowers_bits_and_keeps_transforms() {
        let synth = SynthConfig { n: 3, height: 32, width: 64, ..SynthConfig::default() };
        let pairs: Vec<StereoPair> = synth_pairs(&synth).unwrap().into_iter().map(|p| p.pair).collect();
        let model = Model::new(ModelConfig::new(Pipeline::Ntsc, TransformConfig::micro())).unwrap();
        let measure = |m: &Model| -> f64 {
            pairs
                .iter()
                .map(|p| {
                    let z = |u| Hyperprior(quantize(&m.analyze(u, p.view(u)).unwrap().1 .0).unwrap().to_grid());
                    joint_hyper_entropy_bits(&z(0), &z(1), &m.joint_model().unwrap()).unwrap()
                })
                .sum::<f64>()
                / pairs.len() as f64
        };
        let before = measure(&model);
        let cfg = RefitConfig { steps: 60, ..RefitConfig::default() };
        let (joint, bits) = refit_hyper_model(&model, &pairs, &cfg).unwrap();
        assert!(bits < before);
        assert!((measure(&joint) - bits).abs() < 1e-6 * bits);
        for (k, p) in model.store.iter().filter(|(k, _)| !k.starts_with("gmm.")) {
            assert_eq!(joint.store.get(k).unwrap(), p);
        }
        let (ind, _) = refit_hyper_model(&model, &pairs, &RefitConfig { independent: true, ..cfg }).unwrap();
        assert!(ind.joint_model().unwrap().is_factorized());
    }
}
