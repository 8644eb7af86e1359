//! Trains a micro D-NTSC model on synthetic pairs for a few epochs, then
//! entropy-codes one test pair and decodes it jointly.

use dntsc::checkpoint;
use dntsc::harness::metrics::{bitrate_bpp, psnr};
use dntsc::harness::synth::{synth_pairs, SynthConfig};
use dntsc::model::{Model, ModelConfig, Pipeline};
use dntsc::training::{train, DistortionKind, LossWeights, TrainConfig};
use dntsc::transforms::TransformConfig;

fn main() -> dntsc::Result<()> {
    let split = |n, seed| -> dntsc::Result<Vec<_>> {
        let cfg = SynthConfig { n, height: 32, width: 64, seed, ..SynthConfig::default() };
        Ok(synth_pairs(&cfg)?.into_iter().map(|p| p.pair).collect())
    };
    let (train_set, test) = (split(8, 0)?, split(2, 1)?);

    let mut model = Model::new(ModelConfig::new(Pipeline::Ntsc, TransformConfig::micro()))?;
    let mut cfg = TrainConfig::new(Pipeline::Ntsc, LossWeights::symmetric(200.0, DistortionKind::Mse));
    cfg.epochs = 4;
    cfg.lr_init = 1e-3;
    let report = train(&cfg, &mut model, &train_set, &test, None, None)?;
    for row in &report.rows {
        println!("epoch {} loss {:.4} val psnr {:.2} dB", row.epoch, row.loss, row.psnr_val);
    }

    // a checkpoint round trip leaves the model unchanged
    let bytes = checkpoint::to_bytes(&model, None, None)?;
    let model = checkpoint::from_bytes(&bytes)?.model;

    let pair = &test[0];
    let streams = [model.encode(0, &pair.user1, false)?, model.encode(1, &pair.user2, false)?];
    let [r1, r2] = model.decode_pair(&streams[0].bitstream, &streams[1].bitstream)?;
    for (u, (enc, (x, x_hat))) in streams.iter().zip([(&pair.user1, &r1), (&pair.user2, &r2)]).enumerate() {
        let bits = 8 * enc.bitstream.to_bytes()?.len();
        println!(
            "user {}: {bits} bits ({:.3} bpp), psnr {:.2} dB",
            u + 1,
            bitrate_bpp(bits as f64, x.height(), x.width())?,
            psnr(x.grid(), x_hat.grid())?
        );
    }
    Ok(())
}
