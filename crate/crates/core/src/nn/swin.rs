//! Windowed multi-head self-attention blocks with optional cyclic shift.

use std::rc::Rc;

use rand::Rng;

use super::graph::Var;
use super::layers::{LayerNorm, Linear};
use super::params::{Ctx, ParamStore};

const MASK_NEG: f64 = -100.0;

/// Hyper-parameters of one transformer block.
#[derive(Debug, Clone, Copy)]
pub struct BlockSpec {
    pub dim: usize,
    pub heads: usize,
    /// Nominal window edge; clamped to the grid when the grid is smaller.
    pub window: usize,
    /// Shift applied on axes longer than the effective window.
    pub shift: usize,
    pub mlp_ratio: usize,
    /// Learned relative position bias inside each window.
    pub rel_bias: bool,
}

/// Pre-norm transformer block: `x + W-MSA(LN(x))`, then `x + MLP(LN(x))`.
#[derive(Debug, Clone)]
pub struct SwinBlock {
    spec: BlockSpec,
    norm1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    bias_table: Option<String>,
}

/// Token routing for one grid/window configuration.
struct WindowPlan {
    /// Window-major token order → grid index (after cyclic shift).
    forward: Rc<Vec<isize>>,
    /// Grid index → position in window-major order.
    inverse: Rc<Vec<isize>>,
    n_windows: usize,
    win_tokens: usize,
    /// Additive mask `(n_windows, N, N)` when shifted.
    mask: Option<Vec<f64>>,
    /// Relative offset index `(N, N)` into the bias table.
    rel_index: Vec<usize>,
}

fn effective_window(len: usize, window: usize) -> usize {
    let w = window.min(len).max(1);
    assert_eq!(len % w, 0, "grid length {len} not divisible by window {w}");
    w
}

impl SwinBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, spec: BlockSpec, rng: &mut R) -> Self {
        assert_eq!(spec.dim % spec.heads, 0, "dim {} not divisible by heads {}", spec.dim, spec.heads);
        let d = spec.dim;
        let hidden = d * spec.mlp_ratio;
        let bias_table = if spec.rel_bias {
            let n = (2 * spec.window - 1) * (2 * spec.window - 1);
            let name = format!("{name}.rel_bias");
            store.init_normal(&name, &[n, spec.heads], 0.02, rng);
            Some(name)
        } else {
            None
        };
        SwinBlock {
            spec,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d),
            qkv: Linear::new(store, &format!("{name}.qkv"), d, 3 * d, rng),
            proj: Linear::new(store, &format!("{name}.proj"), d, d, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d),
            fc1: Linear::new(store, &format!("{name}.fc1"), d, hidden, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, d, rng),
            bias_table,
        }
    }

    fn plan(&self, h: usize, w: usize) -> WindowPlan {
        let wh = effective_window(h, self.spec.window);
        let ww = effective_window(w, self.spec.window);
        let sh = if h > wh { self.spec.shift % wh } else { 0 };
        let sw = if w > ww { self.spec.shift % ww } else { 0 };
        let (nh, nw) = (h / wh, w / ww);
        let n_windows = nh * nw;
        let win_tokens = wh * ww;
        let mut forward = Vec::with_capacity(h * w);
        let mut inverse = vec![0isize; h * w];
        for bi in 0..nh {
            for bj in 0..nw {
                for pi in 0..wh {
                    for pj in 0..ww {
                        let ri = bi * wh + pi;
                        let rj = bj * ww + pj;
                        let gi = (ri + sh) % h;
                        let gj = (rj + sw) % w;
                        let src = gi * w + gj;
                        inverse[src] = forward.len() as isize;
                        forward.push(src as isize);
                    }
                }
            }
        }
        let mask = if sh > 0 || sw > 0 {
            let region = |r: usize, len: usize, win: usize, s: usize| -> usize {
                if s == 0 {
                    0
                } else if r < len - win {
                    0
                } else if r < len - s {
                    1
                } else {
                    2
                }
            };
            let mut m = vec![0.0; n_windows * win_tokens * win_tokens];
            for bi in 0..nh {
                for bj in 0..nw {
                    let wi = bi * nw + bj;
                    let labels: Vec<usize> = (0..win_tokens)
                        .map(|t| {
                            let ri = bi * wh + t / ww;
                            let rj = bj * ww + t % ww;
                            region(ri, h, wh, sh) * 3 + region(rj, w, ww, sw)
                        })
                        .collect();
                    for a in 0..win_tokens {
                        for b in 0..win_tokens {
                            if labels[a] != labels[b] {
                                m[(wi * win_tokens + a) * win_tokens + b] = MASK_NEG;
                            }
                        }
                    }
                }
            }
            Some(m)
        } else {
            None
        };
        let mut rel_index = Vec::new();
        if self.bias_table.is_some() {
            let span = 2 * self.spec.window - 1;
            for a in 0..win_tokens {
                for b in 0..win_tokens {
                    let di = (a / ww) as isize - (b / ww) as isize + self.spec.window as isize - 1;
                    let dj = (a % ww) as isize - (b % ww) as isize + self.spec.window as isize - 1;
                    rel_index.push(di as usize * span + dj as usize);
                }
            }
        }
        WindowPlan {
            forward: Rc::new(forward),
            inverse: Rc::new(inverse),
            n_windows,
            win_tokens,
            mask,
            rel_index,
        }
    }

    /// Applies the block to a `(h, w, dim)` grid.
    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Var {
        let s = x.shape().to_vec();
        let (h, w, c) = (s[0], s[1], s[2]);
        assert_eq!(c, self.spec.dim);
        let plan = self.plan(h, w);
        let heads = self.spec.heads;
        let d = c / heads;
        let (nw, n) = (plan.n_windows, plan.win_tokens);

        let tokens = x.reshape(&[h * w, c]);
        let normed = self.norm1.forward(ctx, &tokens);
        // window-major token order, each token's channels contiguous
        let mut idx = Vec::with_capacity(h * w * c);
        for &src in plan.forward.iter() {
            for ch in 0..c {
                idx.push(src * c as isize + ch as isize);
            }
        }
        let win = normed.gather(Rc::new(idx), &[nw * n, c]);
        let qkv = self.qkv.forward(ctx, &win).reshape(&[nw, n, 3, heads, d]);
        let qkv = qkv.permute(&[2, 0, 3, 1, 4]); // (3, nW, heads, N, d)
        let chunk = nw * heads * n * d;
        let take = |i: usize| {
            let idx: Vec<isize> = (i * chunk..(i + 1) * chunk).map(|v| v as isize).collect();
            qkv.gather(Rc::new(idx), &[nw * heads, n, d])
        };
        let (q, k, v) = (take(0), take(1), take(2));
        let mut scores = q.bmm(&k, true).scale(1.0 / (d as f64).sqrt());
        if let Some(table) = &self.bias_table {
            let t = ctx.param(table);
            let mut bidx = Vec::with_capacity(heads * n * n);
            for hd in 0..heads {
                for &r in &plan.rel_index {
                    bidx.push((r * heads + hd) as isize);
                }
            }
            let bias = t.gather(Rc::new(bidx), &[heads, n, n]);
            scores = scores.add_tiled(&bias);
        }
        if let Some(mask) = &plan.mask {
            let mut full = Vec::with_capacity(nw * heads * n * n);
            for wi in 0..nw {
                for _ in 0..heads {
                    full.extend_from_slice(&mask[wi * n * n..(wi + 1) * n * n]);
                }
            }
            scores = scores.add(&Var::constant(&[nw * heads, n, n], full));
        }
        let attn = scores.softmax_last();
        let out = attn.bmm(&v, false).reshape(&[nw, heads, n, d]).permute(&[0, 2, 1, 3]);
        let out = self.proj.forward(ctx, &out.reshape(&[nw * n, c]));
        let mut ridx = Vec::with_capacity(h * w * c);
        for &pos in plan.inverse.iter() {
            for ch in 0..c {
                ridx.push(pos * c as isize + ch as isize);
            }
        }
        let out = out.gather(Rc::new(ridx), &[h * w, c]);
        let x1 = tokens.add(&out);
        let hdn = self.fc1.forward(ctx, &self.norm2.forward(ctx, &x1)).gelu();
        let x2 = x1.add(&self.fc2.forward(ctx, &hdn));
        x2.reshape(&[h, w, c])
    }
}
