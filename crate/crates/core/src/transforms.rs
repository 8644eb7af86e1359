//! Learned analysis/synthesis transforms and the hyperprior transforms.
//!
//! The analysis transform embeds 2×2 patches and runs four stages of windowed
//! attention blocks separated by 2× patch merging, so a `H × W` image becomes
//! a `(H/16, W/16, C4)` latent. The synthesis transform mirrors it, starting
//! from the channel concatenation of the main latent and the aligned side
//! latent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, RgbImage};
use crate::nn::layers::{crop, depth_to_space, space_to_depth, Conv2d, LayerNorm, Linear};
use crate::nn::swin::{BlockSpec, SwinBlock};
use crate::nn::{Ctx, ParamStore, Var};

/// Lower bound on predicted scales.
pub const SIGMA_MIN: f64 = 1e-6;

/// Total spatial downsampling of the analysis transform.
pub const DOWNSAMPLE: usize = 16;

/// Fixed gain on the analysis output, undone at the synthesis input; sets the
/// latent scale relative to the unit quantization bin.
pub const LATENT_GAIN: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformConfig {
    pub channels_per_stage: [usize; 4],
    pub blocks_per_stage: [usize; 4],
    pub heads_per_stage: [usize; 4],
    pub patch_size: usize,
    pub window_size: usize,
    pub shift_size: usize,
    pub mlp_ratio: usize,
    pub hyper_channels: usize,
    pub seed: u64,
}

impl TransformConfig {
    /// Full-size configuration (C = 128/160/192/256, blocks 2/2/6/2, heads 4/8/8/8).
    pub fn full() -> Self {
        TransformConfig {
            channels_per_stage: [128, 160, 192, 256],
            blocks_per_stage: [2, 2, 6, 2],
            heads_per_stage: [4, 8, 8, 8],
            patch_size: 2,
            window_size: 4,
            shift_size: 2,
            mlp_ratio: 4,
            hyper_channels: 192,
            seed: 0,
        }
    }

    /// Tiny configuration for gradient checks and fast tests (C4 = 8).
    pub fn micro() -> Self {
        TransformConfig {
            channels_per_stage: [8, 8, 8, 8],
            blocks_per_stage: [1, 1, 1, 1],
            heads_per_stage: [2, 2, 2, 2],
            patch_size: 2,
            window_size: 4,
            shift_size: 2,
            mlp_ratio: 2,
            hyper_channels: 4,
            seed: 0,
        }
    }

    pub fn latent_channels(&self) -> usize {
        self.channels_per_stage[3]
    }

    pub fn validate(&self) -> Result<()> {
        for (i, (&c, &h)) in self.channels_per_stage.iter().zip(&self.heads_per_stage).enumerate() {
            if c == 0 || h == 0 || self.blocks_per_stage[i] == 0 {
                return Err(Error::Config(format!("stage {i}: channels, heads and blocks must be positive")));
            }
            if c % h != 0 {
                return Err(Error::Config(format!("stage {i}: {c} channels not divisible by {h} heads")));
            }
        }
        if self.patch_size * 8 != DOWNSAMPLE {
            return Err(Error::Config(format!(
                "patch size {} with three 2x merges does not downsample by {DOWNSAMPLE}",
                self.patch_size
            )));
        }
        if self.window_size == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("window size and MLP ratio must be positive".into()));
        }
        if self.hyper_channels == 0 || self.hyper_channels >= self.latent_channels() {
            return Err(Error::Config(format!(
                "hyper channels must be in 1..{} so the hyperprior stays smaller than the latent",
                self.latent_channels()
            )));
        }
        Ok(())
    }

    /// Checks that an `h × w` image downsamples evenly and that every stage
    /// grid tiles into attention windows.
    pub fn check_image_size(&self, h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
            return Err(Error::Shape(format!("image {h}x{w} is not a positive multiple of {DOWNSAMPLE}")));
        }
        for s in 0..4 {
            let f = self.patch_size << s;
            for len in [h / f, w / f] {
                let win = self.window_size.min(len);
                if len % win != 0 {
                    return Err(Error::Shape(format!(
                        "image {h}x{w}: stage {s} grid side {len} does not tile into windows of {win}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn block(&self, stage: usize, index: usize) -> BlockSpec {
        BlockSpec {
            dim: self.channels_per_stage[stage],
            heads: self.heads_per_stage[stage],
            window: self.window_size,
            shift: if index % 2 == 1 { self.shift_size } else { 0 },
            mlp_ratio: self.mlp_ratio,
            rel_bias: true,
        }
    }
}

/// `y_i`: the `(H/16, W/16, C4)` latent grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent(pub Grid);

impl Latent {
    pub fn grid(&self) -> &Grid {
        &self.0
    }

    /// Number of tokens `l = h · w`.
    pub fn tokens(&self) -> usize {
        self.0.h * self.0.w
    }

    /// Row-major `(l, C4)` view; shares the grid's memory layout exactly.
    pub fn token_view(&self) -> (usize, usize, &[f64]) {
        (self.tokens(), self.0.c, &self.0.data)
    }

    pub fn from_tokens(h: usize, w: usize, c: usize, tokens: Vec<f64>) -> Result<Self> {
        Ok(Latent(Grid::new(h, w, c, tokens)?))
    }
}

/// `z_i`: the hyperprior grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperprior(pub Grid);

impl Hyperprior {
    pub fn grid(&self) -> &Grid {
        &self.0
    }
}

/// Per-element Gaussian parameters of the latent predicted from the hyperprior.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mu: Grid,
    pub sigma: Grid,
}

fn check_image(cfg: &TransformConfig, image: &RgbImage) -> Result<()> {
    cfg.check_image_size(image.height(), image.width())?;
    image.grid().check_finite("image")
}

/// `g_a`: image → latent.
#[derive(Debug, Clone)]
pub struct AnalysisTransform {
    cfg: TransformConfig,
    embed: Linear,
    embed_norm: LayerNorm,
    stages: Vec<Vec<SwinBlock>>,
    merges: Vec<(LayerNorm, Linear)>,
    head_norm: LayerNorm,
    head: Linear,
}

impl AnalysisTransform {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &TransformConfig, rng: &mut R) -> Self {
        let c = cfg.channels_per_stage;
        let p = cfg.patch_size;
        let embed = Linear::new(store, &format!("{name}.embed"), p * p * 3, c[0], rng);
        let embed_norm = LayerNorm::new(store, &format!("{name}.embed_norm"), c[0]);
        let mut stages = Vec::new();
        let mut merges = Vec::new();
        for s in 0..4 {
            if s > 0 {
                merges.push((
                    LayerNorm::new(store, &format!("{name}.merge{s}.norm"), 4 * c[s - 1]),
                    Linear::new(store, &format!("{name}.merge{s}.proj"), 4 * c[s - 1], c[s], rng),
                ));
            }
            let blocks = (0..cfg.blocks_per_stage[s])
                .map(|b| SwinBlock::new(store, &format!("{name}.stage{s}.block{b}"), cfg.block(s, b), rng))
                .collect();
            stages.push(blocks);
        }
        let head_norm = LayerNorm::new(store, &format!("{name}.head_norm"), c[3]);
        let head = Linear::new(store, &format!("{name}.head"), c[3], c[3], rng);
        AnalysisTransform {
            cfg: cfg.clone(),
            embed,
            embed_norm,
            stages,
            merges,
            head_norm,
            head,
        }
    }

    /// Differentiable forward on a `(H, W, 3)` variable.
    pub fn forward_var(&self, ctx: &Ctx, x: &Var) -> Var {
        let patches = space_to_depth(&x.add_scalar(-0.5), self.cfg.patch_size);
        let mut t = self.embed_norm.forward(ctx, &self.embed.forward(ctx, &patches));
        for s in 0..4 {
            if s > 0 {
                let (norm, proj) = &self.merges[s - 1];
                t = proj.forward(ctx, &norm.forward(ctx, &space_to_depth(&t, 2)));
            }
            for block in &self.stages[s] {
                t = block.forward(ctx, &t);
            }
        }
        self.head.forward(ctx, &self.head_norm.forward(ctx, &t)).scale(LATENT_GAIN)
    }

    pub fn forward(&self, ctx: &Ctx, image: &RgbImage) -> Result<Latent> {
        check_image(&self.cfg, image)?;
        Ok(Latent(Grid::from_var(&self.forward_var(ctx, &image.grid().to_var()))))
    }
}

/// `g_s`: (main latent ‖ aligned side latent) → image.
#[derive(Debug, Clone)]
pub struct SynthesisTransform {
    cfg: TransformConfig,
    fuse: Linear,
    stages: Vec<Vec<SwinBlock>>,
    expands: Vec<(LayerNorm, Linear)>,
    out_norm: LayerNorm,
    out: Linear,
}

impl SynthesisTransform {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &TransformConfig, rng: &mut R) -> Self {
        let c = cfg.channels_per_stage;
        let p = cfg.patch_size;
        let fuse = Linear::new(store, &format!("{name}.fuse"), 2 * c[3], c[3], rng);
        let mut stages = Vec::new();
        let mut expands = Vec::new();
        // stage order 3, 2, 1, 0
        for s in (0..4).rev() {
            if s < 3 {
                expands.push((
                    LayerNorm::new(store, &format!("{name}.expand{s}.norm"), c[s + 1]),
                    Linear::new(store, &format!("{name}.expand{s}.proj"), c[s + 1], 4 * c[s], rng),
                ));
            }
            let blocks = (0..cfg.blocks_per_stage[s])
                .map(|b| SwinBlock::new(store, &format!("{name}.stage{s}.block{b}"), cfg.block(s, b), rng))
                .collect();
            stages.push(blocks);
        }
        let out_norm = LayerNorm::new(store, &format!("{name}.out_norm"), c[0]);
        // zero output weights: the untrained decoder predicts mid-grey instead of noise
        let out = Linear::new_const(store, &format!("{name}.out"), c[0], &vec![0.0; p * p * 3]);
        SynthesisTransform {
            cfg: cfg.clone(),
            fuse,
            stages,
            expands,
            out_norm,
            out,
        }
    }

    /// Unclamped differentiable reconstruction from two `(h, w, C4)` variables.
    pub fn forward_var(&self, ctx: &Ctx, main: &Var, side: &Var) -> Var {
        assert_eq!(main.shape(), side.shape(), "main/side latent shapes differ");
        let joint = Var::concat(&[main, side], 2).scale(1.0 / LATENT_GAIN);
        let mut t = self.fuse.forward(ctx, &joint);
        for (i, blocks) in self.stages.iter().enumerate() {
            if i > 0 {
                let (norm, proj) = &self.expands[i - 1];
                t = depth_to_space(&proj.forward(ctx, &norm.forward(ctx, &t)), 2);
            }
            for block in blocks {
                t = block.forward(ctx, &t);
            }
        }
        let px = self.out.forward(ctx, &self.out_norm.forward(ctx, &t));
        depth_to_space(&px, self.cfg.patch_size).add_scalar(0.5)
    }

    /// Reconstruction clamped to `[0, 1]`.
    pub fn forward(&self, ctx: &Ctx, main: &Latent, side_aligned: &Latent) -> Result<RgbImage> {
        if !main.0.same_dims(&side_aligned.0) {
            return Err(Error::Shape(format!(
                "main latent {:?} and side latent {:?} differ",
                main.0.dims(),
                side_aligned.0.dims()
            )));
        }
        if main.0.c != self.cfg.latent_channels() {
            return Err(Error::Shape(format!(
                "latent has {} channels, expected {}",
                main.0.c,
                self.cfg.latent_channels()
            )));
        }
        let x = self.forward_var(ctx, &main.0.to_var(), &side_aligned.0.to_var()).clamp(0.0, 1.0);
        Ok(RgbImage(Grid::from_var(&x)))
    }
}

/// `h_a`: latent → hyperprior (3×3 conv + ReLU, then two stride-2 stages).
#[derive(Debug, Clone)]
pub struct HyperAnalysis {
    c1: Conv2d,
    c2: Conv2d,
    c3: Conv2d,
}

impl HyperAnalysis {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &TransformConfig, rng: &mut R) -> Self {
        let c = cfg.latent_channels();
        let hc = cfg.hyper_channels;
        HyperAnalysis {
            c1: Conv2d::new(store, &format!("{name}.conv1"), c, c, 3, 1, 1, rng),
            c2: Conv2d::new(store, &format!("{name}.conv2"), c, c, 3, 2, 1, rng),
            c3: Conv2d::new(store, &format!("{name}.conv3"), c, hc, 3, 2, 1, rng),
        }
    }

    pub fn forward_var(&self, ctx: &Ctx, y: &Var) -> Var {
        let t = self.c1.forward(ctx, y).relu();
        let t = self.c2.forward(ctx, &t).relu();
        self.c3.forward(ctx, &t)
    }

    pub fn forward(&self, ctx: &Ctx, latent: &Latent) -> Result<Hyperprior> {
        latent.0.check_finite("latent")?;
        Ok(Hyperprior(Grid::from_var(&self.forward_var(ctx, &latent.0.to_var()))))
    }
}

/// Spatial size of the hyperprior for a latent of size `h × w`.
pub fn hyper_dims(h: usize, w: usize) -> (usize, usize) {
    let half = |n: usize| n.div_ceil(2);
    (half(half(h)), half(half(w)))
}

/// `h_s`: quantized hyperprior → `(mu, sigma)` of the latent.
#[derive(Debug, Clone)]
pub struct HyperSynthesis {
    up1: Linear,
    up2: Linear,
    out: Conv2d,
    latent_channels: usize,
}

impl HyperSynthesis {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &TransformConfig, rng: &mut R) -> Self {
        let c = cfg.latent_channels();
        let hc = cfg.hyper_channels;
        HyperSynthesis {
            up1: Linear::new(store, &format!("{name}.up1"), hc, 4 * c, rng),
            up2: Linear::new(store, &format!("{name}.up2"), c, 4 * c, rng),
            out: Conv2d::new(store, &format!("{name}.out"), c, 2 * c, 3, 1, 1, rng),
            latent_channels: c,
        }
    }

    /// Returns `(mu, sigma)` variables of shape `(h, w, C4)`.
    pub fn forward_var(&self, ctx: &Ctx, z: &Var, h: usize, w: usize) -> (Var, Var) {
        let mid = (h.div_ceil(2), w.div_ceil(2));
        let t = crop(&depth_to_space(&self.up1.forward(ctx, z), 2), mid.0, mid.1).relu();
        let t = crop(&depth_to_space(&self.up2.forward(ctx, &t), 2), h, w).relu();
        let raw = self.out.forward(ctx, &t);
        let c = self.latent_channels;
        let parts = raw.split_last(&[c, c]);
        let mu = parts[0].clone();
        let sigma = parts[1].softplus().clamp_min(SIGMA_MIN);
        (mu, sigma)
    }

    pub fn forward(&self, ctx: &Ctx, z_hat: &Hyperprior, h: usize, w: usize) -> Result<GaussianParams> {
        let (hz, wz) = hyper_dims(h, w);
        if (z_hat.0.h, z_hat.0.w) != (hz, wz) {
            return Err(Error::Shape(format!(
                "hyperprior {}x{} does not match latent {h}x{w} (expected {hz}x{wz})",
                z_hat.0.h, z_hat.0.w
            )));
        }
        let (mu, sigma) = self.forward_var(ctx, &z_hat.0.to_var(), h, w);
        Ok(GaussianParams {
            mu: Grid::from_var(&mu),
            sigma: Grid::from_var(&sigma),
        })
    }
}
