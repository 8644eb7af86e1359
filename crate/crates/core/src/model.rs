//! The two-user system: transforms, alignment, the joint hyperprior and,
//! for the channel pipeline, the JSCC codecs, all in one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::Localizer;
use crate::channel::{awgn_transmit, capacity, ChannelSpec};
use crate::coding::symbols::{decode_hyper, decode_latent, encode_hyper, encode_latent, hyper_tables};
use crate::coding::{quantize, Bitstream, IntGrid};
use crate::entropy::{expected_token_bits, joint_hyper_entropy_bits, latent_rate_bits, mmse_peer_estimate, HyperGmm, JointHyperModel};
use crate::error::{Error, Result};
use crate::grid::{Grid, RgbImage, StereoPair};
use crate::jscc::{transmission_rate, BandwidthSet, JsccConfig, JsccDecoder, JsccEncoder, RatePlan, SimulationManifest};
use crate::nn::{Ctx, ParamStore, Var};
use crate::transforms::{
    hyper_dims, AnalysisTransform, GaussianParams, HyperAnalysis, HyperSynthesis, Hyperprior, Latent, SynthesisTransform,
    TransformConfig, DOWNSAMPLE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Separate source/channel coding with real bitstreams.
    Ntsc,
    /// Joint source-channel coding over the simulated channel.
    Ntscc,
}

impl std::str::FromStr for Pipeline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ntsc" => Ok(Pipeline::Ntsc),
            "ntscc" => Ok(Pipeline::Ntscc),
            _ => Err(Error::Config(format!("unknown pipeline {s:?} (expected ntsc or ntscc)"))),
        }
    }
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pipeline::Ntsc => "ntsc",
            Pipeline::Ntscc => "ntscc",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub pipeline: Pipeline,
    pub transform: TransformConfig,
    /// Mixture components of the joint hyperprior.
    pub mixtures: usize,
    /// Models the two hyperpriors as independent, `p(z1)·p(z2)`.
    pub independent: bool,
    /// When false the decoder receives an all-zero side latent.
    pub side_info: bool,
    pub bandwidths: Vec<usize>,
    pub power: f64,
    pub eta: f64,
}

impl ModelConfig {
    pub fn new(pipeline: Pipeline, transform: TransformConfig) -> Self {
        ModelConfig {
            pipeline,
            transform,
            mixtures: 3,
            independent: false,
            side_info: true,
            bandwidths: BandwidthSet::multiples_of_eight(20).values().to_vec(),
            power: 1.0,
            eta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.transform.validate()?;
        if self.mixtures == 0 {
            return Err(Error::Config("at least one mixture component is required".into()));
        }
        if !(self.eta > 0.0) || !(self.power > 0.0) {
            return Err(Error::Config(format!("eta {} and power {} must be positive", self.eta, self.power)));
        }
        if self.pipeline == Pipeline::Ntscc {
            BandwidthSet::new(self.bandwidths.clone())?;
        }
        Ok(())
    }

    pub fn jscc(&self) -> Result<JsccConfig> {
        Ok(JsccConfig {
            latent_channels: self.transform.latent_channels(),
            heads: self.transform.heads_per_stage[3],
            mlp_ratio: self.transform.mlp_ratio,
            bandwidths: BandwidthSet::new(self.bandwidths.clone())?,
            power: self.power,
        })
    }
}

/// Parameter name prefixes of every module, in construction order.
pub const MODULES: [&str; 13] = [
    "ga1", "ga2", "ha1", "ha2", "hs1", "hs2", "gmm", "loc", "gs", "fe1", "fe2", "fd1", "fd2",
];

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub(crate) ga: [AnalysisTransform; 2],
    pub(crate) ha: [HyperAnalysis; 2],
    pub(crate) hs: [HyperSynthesis; 2],
    pub(crate) gmm: HyperGmm,
    pub(crate) loc: Localizer,
    pub(crate) gs: SynthesisTransform,
    pub(crate) jscc: Option<([JsccEncoder; 2], [JsccDecoder; 2])>,
}

/// Per-user quantities of one D-NTSC encode.
#[derive(Debug, Clone)]
pub struct EncodedView {
    pub bitstream: Bitstream,
    pub y_bar: IntGrid,
    pub z_bar: IntGrid,
    /// Ideal latent code length under the continuous model.
    pub latent_bits: f64,
}

/// Reconstructions and per-user records of one channel simulation.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub recon: [RgbImage; 2],
    pub manifests: [SimulationManifest; 2],
    pub joint_hyper_bits: f64,
}

impl Model {
    /// Builds a freshly initialized model; initialization depends only on the seed in `cfg`.
    /// The two users' modules start from identical values but train separately.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let t = &cfg.transform;
        let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
        let mut store = ParamStore::new();
        let ga = [
            AnalysisTransform::new(&mut store, "ga1", t, &mut rng.clone()),
            AnalysisTransform::new(&mut store, "ga2", t, &mut rng),
        ];
        let ha = [
            HyperAnalysis::new(&mut store, "ha1", t, &mut rng.clone()),
            HyperAnalysis::new(&mut store, "ha2", t, &mut rng),
        ];
        let hs = [
            HyperSynthesis::new(&mut store, "hs1", t, &mut rng.clone()),
            HyperSynthesis::new(&mut store, "hs2", t, &mut rng),
        ];
        let gmm = HyperGmm::new(&mut store, "gmm", t.hyper_channels, cfg.mixtures, cfg.independent, &mut rng);
        let loc = Localizer::new(&mut store, "loc", t.latent_channels(), &mut rng);
        let gs = SynthesisTransform::new(&mut store, "gs", t, &mut rng);
        let jscc = if cfg.pipeline == Pipeline::Ntscc {
            let jc = cfg.jscc()?;
            let fe = [
                JsccEncoder::new(&mut store, "fe1", &jc, &mut rng.clone()),
                JsccEncoder::new(&mut store, "fe2", &jc, &mut rng),
            ];
            let fd = [
                JsccDecoder::new(&mut store, "fd1", &jc, &mut rng.clone()),
                JsccDecoder::new(&mut store, "fd2", &jc, &mut rng),
            ];
            Some((fe, fd))
        } else {
            None
        };
        Ok(Model {
            cfg,
            store,
            ga,
            ha,
            hs,
            gmm,
            loc,
            gs,
            jscc,
        })
    }

    /// Rebuilds the module structure of `cfg` around an existing parameter store.
    pub fn with_store(cfg: ModelConfig, store: ParamStore) -> Result<Self> {
        let mut model = Model::new(cfg)?;
        let expected: Vec<(&String, &Vec<usize>)> = model.store.iter().map(|(k, p)| (k, &p.shape)).collect();
        let found: Vec<(&String, &Vec<usize>)> = store.iter().map(|(k, p)| (k, &p.shape)).collect();
        if expected != found {
            let missing = expected.iter().find(|e| !found.contains(e)).map(|e| e.0.clone());
            let extra = found.iter().find(|e| !expected.contains(e)).map(|e| e.0.clone());
            return Err(Error::Checkpoint(format!(
                "parameter layout does not match the configuration (missing {missing:?}, unexpected {extra:?})"
            )));
        }
        model.store = store;
        Ok(model)
    }

    /// Per-module and total parameter counts.
    pub fn param_counts(&self) -> Vec<(String, usize)> {
        let mut rows: Vec<(String, usize)> = MODULES
            .iter()
            .map(|m| (m.to_string(), self.store.count_with_prefix(&format!("{m}."))))
            .filter(|(_, n)| *n > 0)
            .collect();
        rows.push(("total".into(), self.store.total_count()));
        rows
    }

    pub fn joint_model(&self) -> Result<JointHyperModel> {
        self.gmm.model(&self.store)
    }

    fn check_image(&self, image: &RgbImage) -> Result<()> {
        self.cfg.transform.check_image_size(image.height(), image.width())
    }

    /// `y_i = g_a(x_i)` and `z_i = h_a(y_i)`.
    pub fn analyze(&self, user: usize, image: &RgbImage) -> Result<(Latent, Hyperprior)> {
        self.check_image(image)?;
        let ctx = Ctx::eval(&self.store);
        let y = self.ga[user].forward(&ctx, image)?;
        let z = self.ha[user].forward(&ctx, &y)?;
        Ok((y, z))
    }

    /// `(mu, sigma)` of user `user`'s latent from a (quantized) hyperprior.
    pub fn latent_params(&self, user: usize, z_hat: &Hyperprior, h: usize, w: usize) -> Result<GaussianParams> {
        self.hs[user].forward(&Ctx::eval(&self.store), z_hat, h, w)
    }

    /// Side latent as the decoder sees it: aligned peer latent, or zeros in the ablation.
    pub fn side_latent(&self, main: &Latent, peer: &Latent) -> Result<Latent> {
        if !self.cfg.side_info {
            let (h, w, c) = main.0.dims();
            return Ok(Latent(Grid::zeros(h, w, c)));
        }
        let ctx = Ctx::eval(&self.store);
        let v = self.loc.align_var(&ctx, &main.0.to_var(), &peer.0.to_var())?;
        Ok(Latent(Grid::from_var(&v)))
    }

    /// `x̂ = g_s(main, aligned side)`, clamped to `[0, 1]`.
    pub fn reconstruct(&self, main: &Latent, peer: &Latent) -> Result<RgbImage> {
        let side = self.side_latent(main, peer)?;
        self.gs.forward(&Ctx::eval(&self.store), main, &side)
    }

    /// D-NTSC encoder of one user.
    pub fn encode(&self, user: usize, image: &RgbImage, embed_tables: bool) -> Result<EncodedView> {
        if user > 1 {
            return Err(Error::Input(format!("user must be 0 or 1, got {user}")));
        }
        let (y, z) = self.analyze(user, image)?;
        let z_bar = quantize(&z.0)?;
        let y_bar = quantize(&y.0)?;
        let params = self.latent_params(user, &Hyperprior(z_bar.to_grid()), y.0.h, y.0.w)?;
        let tables = hyper_tables(&self.joint_model()?, user);
        let bitstream = Bitstream {
            user: user as u8,
            image_dims: (image.height(), image.width()),
            latent_dims: y_bar.dims(),
            hyper_dims: z_bar.dims(),
            z_segment: encode_hyper(&z_bar, &tables)?,
            y_segment: encode_latent(&y_bar, &params)?,
            tables: embed_tables.then_some(tables),
        };
        let latent_bits = latent_rate_bits(&Latent(y_bar.to_grid()), &params)?.total_bits;
        Ok(EncodedView {
            bitstream,
            y_bar,
            z_bar,
            latent_bits,
        })
    }

    /// Entropy-decodes one bitstream into `(ȳ, z̄)`.
    pub fn decode_symbols(&self, b: &Bitstream) -> Result<(IntGrid, IntGrid)> {
        let user = b.user as usize;
        let (lh, lw, lc) = b.latent_dims;
        let (ih, iw) = b.image_dims;
        if (lh * DOWNSAMPLE, lw * DOWNSAMPLE) != (ih, iw) || lc != self.cfg.transform.latent_channels() {
            return Err(Error::Framing(format!("latent dims {:?} do not fit image {ih}x{iw}", b.latent_dims)));
        }
        let (zh, zw) = hyper_dims(lh, lw);
        if b.hyper_dims != (zh, zw, self.cfg.transform.hyper_channels) {
            return Err(Error::Framing(format!("hyperprior dims {:?} do not fit the latent", b.hyper_dims)));
        }
        let tables = match &b.tables {
            Some(t) => t.clone(),
            None => hyper_tables(&self.joint_model()?, user),
        };
        let z_bar = decode_hyper(&b.z_segment, b.hyper_dims, &tables)?;
        let params = self.latent_params(user, &Hyperprior(z_bar.to_grid()), lh, lw)?;
        let y_bar = decode_latent(&b.y_segment, &params)?;
        Ok((y_bar, z_bar))
    }

    /// Joint decoder: both bitstreams in, both reconstructions out.
    pub fn decode_pair(&self, b1: &Bitstream, b2: &Bitstream) -> Result<[RgbImage; 2]> {
        if b1.user != 0 || b2.user != 1 {
            return Err(Error::Framing(format!("expected streams of users 0 and 1, got {} and {}", b1.user, b2.user)));
        }
        if b1.latent_dims != b2.latent_dims {
            return Err(Error::Framing("the two streams have different latent sizes".into()));
        }
        let (y1, _) = self.decode_symbols(b1)?;
        let (y2, _) = self.decode_symbols(b2)?;
        let (l1, l2) = (Latent(y1.to_grid()), Latent(y2.to_grid()));
        Ok([self.reconstruct(&l1, &l2)?, self.reconstruct(&l2, &l1)?])
    }

    /// Receiver and transmitter rate plans of both users from the two quantized hyperpriors.
    ///
    /// Returns `(transmit, receive)`: transmitters see only their own `z̄` and
    /// estimate the peer's; the receiver has both.
    pub fn rate_plans(&self, z_bar: [&Hyperprior; 2], h: usize, w: usize) -> Result<([RatePlan; 2], [RatePlan; 2])> {
        let set = BandwidthSet::new(self.cfg.bandwidths.clone())?;
        let joint = self.joint_model()?;
        let own: Vec<Vec<f64>> = (0..2)
            .map(|u| Ok(expected_token_bits(&self.latent_params(u, z_bar[u], h, w)?)))
            .collect::<Result<_>>()?;
        let mut tx = Vec::new();
        let mut rx = Vec::new();
        for u in 0..2 {
            let peer = 1 - u;
            let z_star = mmse_peer_estimate(z_bar[u], u, &joint)?;
            let est = expected_token_bits(&self.latent_params(peer, &z_star, h, w)?);
            tx.push(RatePlan::from_bits(&own[u], &est, self.cfg.eta, &set)?);
            rx.push(RatePlan::from_bits(&own[u], &own[peer], self.cfg.eta, &set)?);
        }
        Ok(([tx[0].clone(), tx[1].clone()], [rx[0].clone(), rx[1].clone()]))
    }

    /// D-NTSCC transmission of one pair over the channel.
    pub fn simulate(&self, pair: &StereoPair, spec: &ChannelSpec, draw: u64, label: &str) -> Result<Simulation> {
        let (fe, fd) = self
            .jscc
            .as_ref()
            .ok_or_else(|| Error::Config("simulation needs a model built for the ntscc pipeline".into()))?;
        spec.validate()?;
        let ctx = Ctx::eval(&self.store);
        let mut ys = Vec::new();
        let mut zs = Vec::new();
        for u in 0..2 {
            let (y, z) = self.analyze(u, pair.view(u))?;
            ys.push(y);
            zs.push(Hyperprior(quantize(&z.0)?.to_grid()));
        }
        let (h, w, _) = ys[0].0.dims();
        let (tx, rx) = self.rate_plans([&zs[0], &zs[1]], h, w)?;
        let joint_bits = joint_hyper_entropy_bits(&zs[0], &zs[1], &self.joint_model()?)?;
        let mut y_hat = Vec::new();
        let mut manifests = Vec::new();
        for u in 0..2 {
            let s = fe[u].encode(&ctx, &ys[u].0.data, &tx[u])?;
            let s_hat = awgn_transmit(&s, spec, u, &mut spec.rng(u, draw));
            let rec = fd[u].decode(&ctx, &s_hat, &rx[u])?;
            y_hat.push(Latent::from_tokens(h, w, ys[u].0.c, rec)?);
            let snr = spec.snr_db_for(u);
            let cap = if snr.is_finite() { capacity(snr)? } else { f64::INFINITY };
            let (ih, iw) = (pair.view(u).height(), pair.view(u).width());
            manifests.push(SimulationManifest {
                image: label.to_string(),
                user: u,
                k_self: tx[u].k_self.clone(),
                k_peer_est: tx[u].k_peer.clone(),
                n: tx[u].uses(),
                r: transmission_rate(tx[u].uses(), joint_bits, cap, ih, iw, 3)?,
                snr_db: snr,
                seed: spec.seed,
            });
        }
        let recon = [
            self.reconstruct(&y_hat[0], &y_hat[1])?,
            self.reconstruct(&y_hat[1], &y_hat[0])?,
        ];
        Ok(Simulation {
            recon,
            manifests: [manifests[0].clone(), manifests[1].clone()],
            joint_hyper_bits: joint_bits,
        })
    }

    /// Trainable latent of `image` as a graph variable, for callers that build their own passes.
    pub fn analysis_var(&self, ctx: &Ctx, user: usize, image: &RgbImage) -> Var {
        self.ga[user].forward_var(ctx, &image.grid().to_var())
    }

    /// Unclamped reconstruction from a main latent and an already aligned side latent.
    pub fn synthesis_var(&self, ctx: &Ctx, main: &Var, side_aligned: &Var) -> Var {
        self.gs.forward_var(ctx, main, side_aligned)
    }
}
