//! The end-to-end training loop.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_ntsc, loss_ntscc, LossBreakdown, LossWeights};
use super::lr_schedule;
use crate::channel::ChannelSpec;
use crate::checkpoint;
use crate::coding::quantize;
use crate::error::{Error, Result};
use crate::grid::StereoPair;
use crate::harness::metrics::psnr;
use crate::model::{Model, Pipeline};
use crate::nn::{Adam, Ctx, Var};
use crate::transforms::Latent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub seed: u64,
    pub pipeline: Pipeline,
    /// Training SNR of the channel pipeline.
    pub snr_db: f64,
    pub weights: LossWeights,
    /// Save a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    /// Global gradient-norm clip (0 disables).
    pub clip_norm: f64,
}

impl TrainConfig {
    pub fn new(pipeline: Pipeline, weights: LossWeights) -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 2,
            lr_init: 1e-4,
            lr_final: 1e-6,
            seed: 0,
            pipeline,
            snr_db: 5.0,
            weights,
            checkpoint_every: 0,
            clip_norm: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be at least 1".into()));
        }
        if !(self.lr_init > 0.0) || !(self.lr_final > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::Config("clip_norm must be nonnegative".into()));
        }
        self.weights.validate()
    }

    fn channel(&self, power: f64) -> Result<ChannelSpec> {
        ChannelSpec::new(self.snr_db, power, self.seed)
    }
}

/// One line of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub loss: f64,
    pub distortion1: f64,
    pub distortion2: f64,
    pub rate_y1: f64,
    pub rate_y2: f64,
    pub rate_z_joint: f64,
    pub lr: f64,
    pub psnr_val: f64,
}

pub const LOG_HEADER: &str = "epoch,loss,distortion1,distortion2,rate_y1,rate_y2,rate_z_joint,lr,psnr_val";

impl LogRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.6}",
            self.epoch,
            self.loss,
            self.distortion1,
            self.distortion2,
            self.rate_y1,
            self.rate_y2,
            self.rate_z_joint,
            self.lr,
            self.psnr_val
        )
    }
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

/// Resumable trainer state, stored inside checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: TrainConfig,
    pub next_epoch: usize,
    pub step: usize,
    pub rows: Vec<LogRow>,
}

/// Where training writes its log and checkpoints.
#[derive(Debug, Clone)]
pub struct OutputDir(pub PathBuf);

impl OutputDir {
    pub fn log(&self) -> PathBuf {
        self.0.join("train_log.csv")
    }

    pub fn checkpoint(&self, epoch: usize) -> PathBuf {
        self.0.join(format!("epoch{epoch:04}.dntx"))
    }

    pub fn last(&self) -> PathBuf {
        self.0.join("last.dntx")
    }
}

fn epoch_rng(seed: u64, epoch: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_F42D_4C95_7F2D_u64.wrapping_mul(epoch as u64 + 1));
    rng.set_stream(stream);
    rng
}

/// Mean PSNR over both users of the inference path (quantized latents, or the simulated channel).
pub fn validation_psnr(model: &Model, val: &[StereoPair], spec: &ChannelSpec) -> Result<f64> {
    if val.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for (i, pair) in val.iter().enumerate() {
        let recon = match model.cfg.pipeline {
            Pipeline::Ntsc => {
                let mut ys = Vec::new();
                for u in 0..2 {
                    let (y, _) = model.analyze(u, pair.view(u))?;
                    ys.push(Latent(quantize(&y.0)?.to_grid()));
                }
                [model.reconstruct(&ys[0], &ys[1])?, model.reconstruct(&ys[1], &ys[0])?]
            }
            Pipeline::Ntscc => model.simulate(pair, spec, i as u64, "val")?.recon,
        };
        for u in 0..2 {
            total += psnr(pair.view(u).grid(), recon[u].grid())?;
        }
    }
    Ok(total / (2 * val.len()) as f64)
}

fn clip(grads: &mut std::collections::BTreeMap<String, Vec<f64>>, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.values_mut().flatten().for_each(|g| *g *= s);
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub rows: Vec<LogRow>,
    pub optimizer: Adam,
    pub state: TrainState,
}

/// Trains `model` in place. With `resume`, continues from a saved state and
/// optimizer; the result is identical to an uninterrupted run.
pub fn train(
    cfg: &TrainConfig,
    model: &mut Model,
    train_set: &[StereoPair],
    val_set: &[StereoPair],
    out: Option<&OutputDir>,
    resume: Option<(TrainState, Adam)>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training split has no pairs".into()));
    }
    if cfg.pipeline != model.cfg.pipeline {
        return Err(Error::Config(format!(
            "training config is for {}, model is built for {}",
            cfg.pipeline, model.cfg.pipeline
        )));
    }
    let spec = cfg.channel(model.cfg.power)?;
    let batches_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let (mut state, mut adam) = match resume {
        Some((s, a)) => {
            if s.config != *cfg {
                return Err(Error::Config("resumed state was produced with a different training config".into()));
            }
            (s, a)
        }
        None => (
            TrainState {
                config: cfg.clone(),
                next_epoch: 0,
                step: 0,
                rows: Vec::new(),
            },
            Adam::default(),
        ),
    };
    if let Some(o) = out {
        fs::create_dir_all(&o.0)?;
    }
    let mut last_finite: Option<LossBreakdown> = None;
    for epoch in state.next_epoch..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch, 1));
        let mut noise = epoch_rng(cfg.seed, epoch, 2);
        let mut sums = [0.0f64; 7];
        let mut lr = cfg.lr_init;
        for batch in order.chunks(cfg.batch_size) {
            lr = lr_schedule(state.step, total_steps, cfg.lr_init, cfg.lr_final)?;
            let ctx = Ctx::train(&model.store);
            let mut losses: Vec<Var> = Vec::new();
            for &i in batch {
                let f = match cfg.pipeline {
                    Pipeline::Ntsc => loss_ntsc(model, &ctx, &train_set[i], &cfg.weights, &mut noise)?,
                    Pipeline::Ntscc => loss_ntscc(model, &ctx, &train_set[i], &cfg.weights, &spec, &mut noise)?,
                };
                let b = f.breakdown;
                if !f.loss.item().is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        step: state.step,
                        last_finite: last_finite.map_or("none".into(), |l| l.describe()),
                    });
                }
                let vals = [
                    f.loss.item(),
                    b.distortion[0],
                    b.distortion[1],
                    b.rate_y[0],
                    b.rate_y[1],
                    b.rate_z_joint,
                    1.0,
                ];
                for (s, v) in sums.iter_mut().zip(vals) {
                    *s += v;
                }
                last_finite = Some(b);
                losses.push(f.loss);
            }
            let count = losses.len() as f64;
            let loss = losses
                .into_iter()
                .reduce(|a, b| a.add(&b))
                .expect("non-empty batch")
                .scale(1.0 / count);
            loss.backward();
            let mut grads = ctx.grads();
            drop(ctx);
            if grads.values().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    step: state.step,
                    last_finite: last_finite.map_or("none".into(), |l| l.describe()),
                });
            }
            clip(&mut grads, cfg.clip_norm);
            adam.update(&mut model.store, &grads, lr);
            state.step += 1;
        }
        let n = sums[6];
        let row = LogRow {
            epoch,
            loss: sums[0] / n,
            distortion1: sums[1] / n,
            distortion2: sums[2] / n,
            rate_y1: sums[3] / n,
            rate_y2: sums[4] / n,
            rate_z_joint: sums[5] / n,
            lr,
            psnr_val: validation_psnr(model, val_set, &spec)?,
        };
        state.rows.push(row);
        state.next_epoch = epoch + 1;
        if let Some(o) = out {
            fs::write(o.log(), log_csv(&state.rows))?;
            let snapshot = serde_json::to_value(&state)?;
            let due = cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0;
            if due {
                checkpoint::save(&o.checkpoint(epoch + 1), model, Some(&adam), Some(&snapshot))?;
            }
            if due || epoch + 1 == cfg.epochs {
                checkpoint::save(&o.last(), model, Some(&adam), Some(&snapshot))?;
            }
        }
    }
    Ok(TrainReport {
        rows: state.rows.clone(),
        optimizer: adam,
        state,
    })
}

/// Loads a checkpoint written by [`train`] and returns what is needed to resume.
pub fn resume_from(path: &Path) -> Result<(Model, TrainState, Adam)> {
    let ck = checkpoint::load(path)?;
    let state: TrainState = serde_json::from_value(
        ck.state
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no trainer state".into()))?,
    )?;
    let adam = ck
        .optimizer
        .ok_or_else(|| Error::Checkpoint("checkpoint carries no optimizer state".into()))?;
    Ok((ck.model, state, adam))
}
