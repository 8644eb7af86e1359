//! Rate-distortion evaluation of trained checkpoints.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelSpec;
use crate::checkpoint;
use crate::entropy::joint_hyper_entropy_bits;
use crate::error::{Error, Result};
use crate::grid::StereoPair;
use crate::harness::metrics::{bitrate_bpp, psnr};
use crate::model::{Model, Pipeline};
use crate::training::distortion::ms_ssim;
use crate::transforms::Hyperprior;

/// One row of an RD table, averaged over a test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RDPoint {
    pub series: String,
    pub label: String,
    /// `1`, `2` or `avg`.
    pub user: String,
    /// Accounting bpp (ntsc) or transmission rate r (ntscc).
    pub rate: f64,
    /// Entropy-coded segment bits per pixel (ntsc only).
    pub coded_bpp: Option<f64>,
    /// Whole container bits per pixel, header included (ntsc only).
    pub file_bpp: Option<f64>,
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub series: String,
    pub label: String,
    pub seed: u64,
    /// Channel SNR for ntscc models.
    pub snr_db: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    rate: f64,
    coded: f64,
    file: f64,
    psnr: f64,
    ms_ssim: f64,
}

impl Acc {
    fn add(&mut self, o: &Acc) {
        self.rate += o.rate;
        self.coded += o.coded;
        self.file += o.file;
        self.psnr += o.psnr;
        self.ms_ssim += o.ms_ssim;
    }

    fn scale(&self, s: f64) -> Acc {
        Acc {
            rate: self.rate * s,
            coded: self.coded * s,
            file: self.file * s,
            psnr: self.psnr * s,
            ms_ssim: self.ms_ssim * s,
        }
    }
}

fn quality(pair: &StereoPair, u: usize, recon: &crate::grid::RgbImage) -> Result<(f64, f64)> {
    let x = pair.view(u).grid();
    Ok((psnr(x, recon.grid())?, ms_ssim(x, recon.grid())?))
}

/// Per-user metrics of one pair on the bitstream path.
fn ntsc_pair(model: &Model, pair: &StereoPair) -> Result<[Acc; 2]> {
    let (h, w) = (pair.user1.height(), pair.user1.width());
    let e = [model.encode(0, &pair.user1, false)?, model.encode(1, &pair.user2, false)?];
    let zs = [Hyperprior(e[0].z_bar.to_grid()), Hyperprior(e[1].z_bar.to_grid())];
    let joint = joint_hyper_entropy_bits(&zs[0], &zs[1], &model.joint_model()?)?;
    let recon = model.decode_pair(&e[0].bitstream, &e[1].bitstream)?;
    let mut out = [Acc::default(); 2];
    for u in 0..2 {
        let b = &e[u].bitstream;
        let (p, s) = quality(pair, u, &recon[u])?;
        out[u] = Acc {
            rate: bitrate_bpp(e[u].latent_bits + joint / 2.0, h, w)?,
            coded: bitrate_bpp(8.0 * (b.z_segment.len() + b.y_segment.len()) as f64, h, w)?,
            file: bitrate_bpp(8.0 * b.len_bytes() as f64, h, w)?,
            psnr: p,
            ms_ssim: s,
        };
    }
    Ok(out)
}

fn ntscc_pair(model: &Model, pair: &StereoPair, spec: &ChannelSpec, index: usize) -> Result<[Acc; 2]> {
    let sim = model.simulate(pair, spec, index as u64, &format!("{index}"))?;
    let mut out = [Acc::default(); 2];
    for u in 0..2 {
        let (p, s) = quality(pair, u, &sim.recon[u])?;
        out[u] = Acc {
            rate: sim.manifests[u].r,
            psnr: p,
            ms_ssim: s,
            ..Acc::default()
        };
    }
    Ok(out)
}

/// Evaluates `model` on every pair and returns rows for user 1, user 2 and their average.
pub fn evaluate(model: &Model, pairs: &[StereoPair], opts: &EvalOptions) -> Result<Vec<RDPoint>> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("evaluation needs at least one pair".into()));
    }
    let spec = ChannelSpec::new(opts.snr_db, model.cfg.power, opts.seed)?;
    let mut sums = [Acc::default(); 2];
    for (i, pair) in pairs.iter().enumerate() {
        let per = match model.cfg.pipeline {
            Pipeline::Ntsc => ntsc_pair(model, pair)?,
            Pipeline::Ntscc => ntscc_pair(model, pair, &spec, i)?,
        };
        sums[0].add(&per[0]);
        sums[1].add(&per[1]);
    }
    let n = pairs.len() as f64;
    let users = [sums[0].scale(1.0 / n), sums[1].scale(1.0 / n)];
    let mut avg = users[0];
    avg.add(&users[1]);
    let avg = avg.scale(0.5);
    let ntsc = model.cfg.pipeline == Pipeline::Ntsc;
    Ok([("1", users[0]), ("2", users[1]), ("avg", avg)]
        .into_iter()
        .map(|(user, a)| RDPoint {
            series: opts.series.clone(),
            label: opts.label.clone(),
            user: user.into(),
            rate: a.rate,
            coded_bpp: ntsc.then_some(a.coded),
            file_bpp: ntsc.then_some(a.file),
            psnr_db: a.psnr,
            ms_ssim: a.ms_ssim,
            snr_db: (!ntsc).then_some(opts.snr_db),
            seed: opts.seed,
            images: pairs.len(),
        })
        .collect())
}

/// One trained model of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub label: String,
    pub checkpoint: PathBuf,
}

/// Rows of every point that evaluated, and the error of every point that did not.
#[derive(Debug, Default)]
pub struct SweepOutcome {
    pub points: Vec<RDPoint>,
    pub failures: Vec<(String, Error)>,
}

pub fn evaluate_sweep(sweep: &[SweepPoint], pairs: &[StereoPair], series: &str, seed: u64, snr_db: f64) -> SweepOutcome {
    let mut out = SweepOutcome::default();
    for p in sweep {
        let opts = EvalOptions {
            series: series.into(),
            label: p.label.clone(),
            seed,
            snr_db,
        };
        match checkpoint::load(&p.checkpoint).and_then(|ck| evaluate(&ck.model, pairs, &opts)) {
            Ok(rows) => out.points.extend(rows),
            Err(e) => out.failures.push((p.label.clone(), e)),
        }
    }
    out
}

pub fn write_csv(path: &Path, rows: &[RDPoint]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, to_csv(rows)?)?;
    Ok(())
}

pub fn to_csv(rows: &[RDPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Input(e.to_string()))
}

pub fn read_csv(path: &Path) -> Result<Vec<RDPoint>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
