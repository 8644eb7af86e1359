//! Trains a micro D-NTSCC model briefly and simulates transmission of one
//! pair over the AWGN channel at several test SNRs.

use dntsc::channel::ChannelSpec;
use dntsc::harness::metrics::psnr;
use dntsc::harness::synth::{synth_pairs, SynthConfig};
use dntsc::model::{Model, ModelConfig, Pipeline};
use dntsc::training::{train, DistortionKind, LossWeights, TrainConfig};
use dntsc::transforms::TransformConfig;

fn main() -> dntsc::Result<()> {
    let cfg = SynthConfig { n: 6, height: 32, width: 64, ..SynthConfig::default() };
    let pairs: Vec<_> = synth_pairs(&cfg)?.into_iter().map(|p| p.pair).collect();
    let (train_set, test) = pairs.split_at(5);

    let mut model = Model::new(ModelConfig::new(Pipeline::Ntscc, TransformConfig::micro()))?;
    let mut tc = TrainConfig::new(Pipeline::Ntscc, LossWeights::symmetric(2000.0, DistortionKind::Mse));
    tc.epochs = 40;
    tc.lr_init = 3e-3;
    tc.lr_final = 3e-4;
    train(&tc, &mut model, train_set, &[], None, None)?;

    for snr in [-5.0, 0.0, 5.0, 10.0, 30.0] {
        let sim = model.simulate(&test[0], &ChannelSpec::new(snr, 1.0, 0)?, 0, "pair0")?;
        let m = &sim.manifests[0];
        println!(
            "snr {snr:5.1} dB: n = {}, r = {:.4}, psnr {:.3} / {:.3} dB",
            m.n,
            m.r,
            psnr(test[0].user1.grid(), sim.recon[0].grid())?,
            psnr(test[0].user2.grid(), sim.recon[1].grid())?
        );
    }
    Ok(())
}
