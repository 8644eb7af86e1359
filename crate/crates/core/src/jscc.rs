//! Token-wise variable-rate joint source-channel codec.
//!
//! Each latent token `y_j` is sent with `k_j` real channel dimensions
//! (`k_j / 2` complex uses), where `k_j` is picked from a bandwidth set by
//! matching the token's code length. The encoder conditions on learnable
//! rate tokens for its own `k_j` and the estimated `k` of the other user.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelVector;
use crate::error::{Error, Result};
use crate::nn::layers::Linear;
use crate::nn::swin::{BlockSpec, SwinBlock};
use crate::nn::{Ctx, ParamStore, Var};

/// Width of one rate token.
pub const RATE_TOKEN_LEN: usize = 4;

/// Window edge large enough that every block attends over all tokens.
const GLOBAL_WINDOW: usize = 1 << 20;

/// Allowed per-token real dimensions, strictly increasing and even.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandwidthSet(Vec<usize>);

impl BandwidthSet {
    pub fn new(values: Vec<usize>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("bandwidth set is empty".into()));
        }
        if values.iter().any(|v| *v == 0 || v % 2 != 0) {
            return Err(Error::Config(format!("bandwidths must be positive and even: {values:?}")));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("bandwidths must increase strictly: {values:?}")));
        }
        Ok(BandwidthSet(values))
    }

    /// `{8a | a = 1..=count}`.
    pub fn multiples_of_eight(count: usize) -> Self {
        BandwidthSet((1..=count).map(|a| 8 * a).collect())
    }

    pub fn values(&self) -> &[usize] {
        &self.0
    }

    pub fn index_of(&self, k: usize) -> Option<usize> {
        self.0.binary_search(&k).ok()
    }
}

/// Nearest member of `v` to `eta · token_bits`; ties go to the smaller member.
pub fn select_bandwidth(token_bits: f64, eta: f64, v: &[usize]) -> Result<usize> {
    if v.is_empty() {
        return Err(Error::Config("bandwidth set is empty".into()));
    }
    if !(token_bits >= 0.0) || !(eta > 0.0) {
        return Err(Error::Parameter(format!("token bits {token_bits} and eta {eta} must be nonnegative/positive")));
    }
    let target = eta * token_bits;
    let mut best = v[0];
    for &c in &v[1..] {
        if (c as f64 - target).abs() < (best as f64 - target).abs() {
            best = c;
        }
    }
    Ok(best)
}

/// Bandwidths for one user's tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatePlan {
    pub k_self: Vec<usize>,
    /// Peer bandwidths: estimated at the transmitter, actual at the receiver.
    pub k_peer: Vec<usize>,
}

impl RatePlan {
    pub fn from_bits(self_bits: &[f64], peer_bits: &[f64], eta: f64, set: &BandwidthSet) -> Result<Self> {
        if self_bits.len() != peer_bits.len() {
            return Err(Error::Shape(format!(
                "{} own token rates vs {} peer token rates",
                self_bits.len(),
                peer_bits.len()
            )));
        }
        let pick = |b: &[f64]| b.iter().map(|&x| select_bandwidth(x, eta, set.values())).collect::<Result<Vec<_>>>();
        Ok(RatePlan {
            k_self: pick(self_bits)?,
            k_peer: pick(peer_bits)?,
        })
    }

    pub fn tokens(&self) -> usize {
        self.k_self.len()
    }

    /// Complex channel uses `n = Σ k / 2`.
    pub fn uses(&self) -> usize {
        self.k_self.iter().sum::<usize>() / 2
    }

    pub fn segments(&self) -> Vec<usize> {
        self.k_self.iter().map(|k| k / 2).collect()
    }
}

/// `(n + H(z̄1, z̄2) / (2·capacity)) / (C·H·W)` channel uses per source dimension.
pub fn transmission_rate(n: usize, joint_hyper_bits: f64, capacity: f64, h: usize, w: usize, c: usize) -> Result<f64> {
    if !(capacity > 0.0) {
        return Err(Error::Parameter(format!("capacity must be positive, got {capacity}")));
    }
    if !(joint_hyper_bits >= 0.0) || h * w * c == 0 {
        return Err(Error::Parameter("hyper bits must be nonnegative and dimensions positive".into()));
    }
    Ok((n as f64 + joint_hyper_bits / (2.0 * capacity)) / (c * h * w) as f64)
}

/// Scales `s` so that `Σ s² = n · power` with `n = len / 2`.
pub fn power_normalize_var(s: &Var, power: f64) -> Var {
    let n = s.len() as f64 / 2.0;
    let factor = s.square().sum().scale(1.0 / (n * power)).powf(-0.5);
    s.mul_tiled(&factor.reshape(&[1]))
}

/// Per-run record of one user's transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationManifest {
    pub image: String,
    pub user: usize,
    pub k_self: Vec<usize>,
    pub k_peer_est: Vec<usize>,
    pub n: usize,
    pub r: f64,
    pub snr_db: f64,
    pub seed: u64,
}

fn check_plan(plan: &RatePlan, tokens: usize, set: &BandwidthSet) -> Result<()> {
    if plan.k_self.len() != tokens || plan.k_peer.len() != tokens {
        return Err(Error::Shape(format!(
            "plan for {}/{} tokens, latent has {tokens}",
            plan.k_self.len(),
            plan.k_peer.len()
        )));
    }
    for &k in plan.k_self.iter().chain(&plan.k_peer) {
        if set.index_of(k).is_none() {
            return Err(Error::Shape(format!("bandwidth {k} is not in the set")));
        }
    }
    Ok(())
}

fn rate_tokens(ctx: &Ctx, self_name: &str, peer_name: &str, plan: &RatePlan, set: &BandwidthSet) -> Var {
    let l = plan.tokens();
    let idx = |ks: &[usize]| -> Rc<Vec<isize>> {
        Rc::new(
            ks.iter()
                .flat_map(|&k| {
                    let row = set.index_of(k).unwrap();
                    (0..RATE_TOKEN_LEN).map(move |t| (row * RATE_TOKEN_LEN + t) as isize)
                })
                .collect(),
        )
    };
    let own = ctx.param(self_name).gather(idx(&plan.k_self), &[l, RATE_TOKEN_LEN]);
    let peer = ctx.param(peer_name).gather(idx(&plan.k_peer), &[l, RATE_TOKEN_LEN]);
    Var::concat(&[&own, &peer], 1)
}

/// Token rows grouped by bandwidth, in ascending token order per group.
fn groups(k_self: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut g: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (j, &k) in k_self.iter().enumerate() {
        g.entry(k).or_default().push(j);
    }
    g
}

fn block_spec(dim: usize, heads: usize, mlp_ratio: usize) -> BlockSpec {
    BlockSpec {
        dim,
        heads,
        window: GLOBAL_WINDOW,
        shift: 0,
        mlp_ratio,
        rel_bias: false,
    }
}

/// Settings shared by a user's encoder and decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsccConfig {
    pub latent_channels: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub bandwidths: BandwidthSet,
    pub power: f64,
}

#[derive(Debug, Clone)]
pub struct JsccEncoder {
    cfg: JsccConfig,
    tok_self: String,
    tok_peer: String,
    embed: Linear,
    block: SwinBlock,
    heads: Vec<Linear>,
}

impl JsccEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &JsccConfig, rng: &mut R) -> Self {
        let c = cfg.latent_channels;
        let q = cfg.bandwidths.values().len();
        let tok_self = format!("{name}.rate_self");
        let tok_peer = format!("{name}.rate_peer");
        store.init_normal(&tok_self, &[q, RATE_TOKEN_LEN], 1.0, rng);
        store.init_normal(&tok_peer, &[q, RATE_TOKEN_LEN], 1.0, rng);
        JsccEncoder {
            tok_self,
            tok_peer,
            embed: Linear::new(store, &format!("{name}.embed"), c + 2 * RATE_TOKEN_LEN, c, rng),
            block: SwinBlock::new(store, &format!("{name}.block"), block_spec(c, cfg.heads, cfg.mlp_ratio), rng),
            heads: cfg
                .bandwidths
                .values()
                .iter()
                .map(|&k| Linear::new(store, &format!("{name}.head{k}"), c, k, rng))
                .collect(),
            cfg: cfg.clone(),
        }
    }

    /// `(l, C)` tokens → `2n` power-normalized reals in token order.
    pub fn encode_var(&self, ctx: &Ctx, y: &Var, plan: &RatePlan) -> Result<Var> {
        let s = y.shape().to_vec();
        let (l, c) = (s[0], s[1]);
        if c != self.cfg.latent_channels {
            return Err(Error::Shape(format!("latent width {c}, codec expects {}", self.cfg.latent_channels)));
        }
        check_plan(plan, l, &self.cfg.bandwidths)?;
        let tokens = rate_tokens(ctx, &self.tok_self, &self.tok_peer, plan, &self.cfg.bandwidths);
        let x = self.embed.forward(ctx, &Var::concat(&[y, &tokens], 1));
        let x = self.block.forward(ctx, &x.reshape(&[1, l, c])).reshape(&[l, c]);

        // run each bandwidth's head on its tokens, then restore token order
        let mut parts = Vec::new();
        let mut offset = BTreeMap::new();
        let mut acc = 0usize;
        for (k, rows) in groups(&plan.k_self) {
            let idx: Vec<isize> = rows.iter().flat_map(|&j| (0..c).map(move |ch| (j * c + ch) as isize)).collect();
            let sel = x.gather(Rc::new(idx), &[rows.len(), c]);
            let head = &self.heads[self.cfg.bandwidths.index_of(k).unwrap()];
            let out = head.forward(ctx, &sel).reshape(&[rows.len() * k]);
            for (r, &j) in rows.iter().enumerate() {
                offset.insert(j, acc + r * k);
            }
            acc += rows.len() * k;
            parts.push(out);
        }
        let refs: Vec<&Var> = parts.iter().collect();
        let flat = Var::concat(&refs, 0);
        let order: Vec<isize> = (0..l)
            .flat_map(|j| {
                let o = offset[&j];
                (0..plan.k_self[j]).map(move |t| (o + t) as isize)
            })
            .collect();
        let s = flat.gather(Rc::new(order), &[acc]);
        Ok(power_normalize_var(&s, self.cfg.power))
    }

    pub fn encode(&self, ctx: &Ctx, y_tokens: &[f64], plan: &RatePlan) -> Result<ChannelVector> {
        let c = self.cfg.latent_channels;
        if y_tokens.len() % c != 0 {
            return Err(Error::Shape(format!("{} values are not whole tokens of width {c}", y_tokens.len())));
        }
        let y = Var::constant(&[y_tokens.len() / c, c], y_tokens.to_vec());
        let s = self.encode_var(ctx, &y, plan)?;
        ChannelVector::new(s.to_vec(), plan.segments(), self.cfg.power)
    }
}

#[derive(Debug, Clone)]
pub struct JsccDecoder {
    cfg: JsccConfig,
    tok_self: String,
    tok_peer: String,
    inputs: Vec<Linear>,
    fuse: Linear,
    block: SwinBlock,
    out: Linear,
}

impl JsccDecoder {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &JsccConfig, rng: &mut R) -> Self {
        let c = cfg.latent_channels;
        let q = cfg.bandwidths.values().len();
        let tok_self = format!("{name}.rate_self");
        let tok_peer = format!("{name}.rate_peer");
        store.init_normal(&tok_self, &[q, RATE_TOKEN_LEN], 1.0, rng);
        store.init_normal(&tok_peer, &[q, RATE_TOKEN_LEN], 1.0, rng);
        JsccDecoder {
            tok_self,
            tok_peer,
            inputs: cfg
                .bandwidths
                .values()
                .iter()
                .map(|&k| Linear::new(store, &format!("{name}.in{k}"), k, c, rng))
                .collect(),
            fuse: Linear::new(store, &format!("{name}.fuse"), c + 2 * RATE_TOKEN_LEN, c, rng),
            block: SwinBlock::new(store, &format!("{name}.block"), block_spec(c, cfg.heads, cfg.mlp_ratio), rng),
            out: Linear::new(store, &format!("{name}.out"), c, c, rng),
            cfg: cfg.clone(),
        }
    }

    /// `2n` received reals → `(l, C)` latent tokens.
    pub fn decode_var(&self, ctx: &Ctx, s_hat: &Var, plan: &RatePlan) -> Result<Var> {
        let l = plan.tokens();
        let c = self.cfg.latent_channels;
        check_plan(plan, l, &self.cfg.bandwidths)?;
        if s_hat.len() != 2 * plan.uses() {
            return Err(Error::Framing(format!(
                "received {} reals, plan needs {}",
                s_hat.len(),
                2 * plan.uses()
            )));
        }
        let mut starts = Vec::with_capacity(l);
        let mut acc = 0;
        for &k in &plan.k_self {
            starts.push(acc);
            acc += k;
        }
        let starts = &starts;
        let mut parts = Vec::new();
        let mut slot = vec![0usize; l];
        let mut row = 0;
        for (k, rows) in groups(&plan.k_self) {
            let idx: Vec<isize> = rows
                .iter()
                .flat_map(|&j| (0..k).map(move |t| (starts[j] + t) as isize))
                .collect();
            let sel = s_hat.gather(Rc::new(idx), &[rows.len(), k]);
            let layer = &self.inputs[self.cfg.bandwidths.index_of(k).unwrap()];
            parts.push(layer.forward(ctx, &sel));
            for &j in &rows {
                slot[j] = row;
                row += 1;
            }
        }
        let refs: Vec<&Var> = parts.iter().collect();
        let stacked = Var::concat(&refs, 0);
        let slot = &slot;
        let order: Vec<isize> = (0..l)
            .flat_map(|j| (0..c).map(move |ch| (slot[j] * c + ch) as isize))
            .collect();
        let x = stacked.gather(Rc::new(order), &[l, c]);
        let tokens = rate_tokens(ctx, &self.tok_self, &self.tok_peer, plan, &self.cfg.bandwidths);
        let x = self.fuse.forward(ctx, &Var::concat(&[&x, &tokens], 1));
        let x = self.block.forward(ctx, &x.reshape(&[1, l, c])).reshape(&[l, c]);
        Ok(self.out.forward(ctx, &x))
    }

    pub fn decode(&self, ctx: &Ctx, s_hat: &ChannelVector, plan: &RatePlan) -> Result<Vec<f64>> {
        if s_hat.segments != plan.segments() {
            return Err(Error::Framing("received segment lengths disagree with the rate plan".into()));
        }
        let v = Var::constant(&[s_hat.reals.len()], s_hat.reals.clone());
        Ok(self.decode_var(ctx, &v, plan)?.to_vec())
    }
}
