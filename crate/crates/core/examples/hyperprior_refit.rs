//! Refits the hyperprior mixture of a briefly trained model twice, once as a
//! joint density and once as a product of marginals, and compares the bits.

use dntsc::harness::synth::{synth_pairs, SynthConfig};
use dntsc::model::{Model, ModelConfig, Pipeline};
use dntsc::training::{refit_hyper_model, train, DistortionKind, LossWeights, RefitConfig, TrainConfig};
use dntsc::transforms::TransformConfig;

fn main() -> dntsc::Result<()> {
    let cfg = SynthConfig { n: 8, height: 32, width: 64, ..SynthConfig::default() };
    let pairs: Vec<_> = synth_pairs(&cfg)?.into_iter().map(|p| p.pair).collect();
    let mut model = Model::new(ModelConfig::new(Pipeline::Ntsc, TransformConfig::micro()))?;
    let mut tc = TrainConfig::new(Pipeline::Ntsc, LossWeights::symmetric(200.0, DistortionKind::Mse));
    tc.epochs = 2;
    tc.lr_init = 1e-3;
    train(&tc, &mut model, &pairs, &[], None, None)?;

    let rc = RefitConfig { steps: 150, ..RefitConfig::default() };
    let (_, joint) = refit_hyper_model(&model, &pairs, &rc)?;
    let (_, independent) = refit_hyper_model(&model, &pairs, &RefitConfig { independent: true, ..rc })?;
    println!("hyperprior bits per pair: joint {joint:.1}, independent {independent:.1}");
    Ok(())
}
