//! Dense, normalization and convolution layers plus grid rearrangements.
//!
//! Feature grids are stored channel-last: `(h, w, c)` in row-major order.

use std::rc::Rc;

use rand::Rng;

use super::graph::Var;
use super::params::{Ctx, ParamStore};

#[derive(Debug, Clone)]
pub struct Linear {
    w: String,
    b: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let w = format!("{name}.weight");
        let b = format!("{name}.bias");
        store.init_uniform(&w, &[in_dim, out_dim], in_dim, rng);
        store.init_const(&b, &[out_dim], 0.0);
        Linear { w, b, in_dim, out_dim }
    }

    /// A linear layer whose weight starts at zero and bias at `bias`.
    pub fn new_const(store: &mut ParamStore, name: &str, in_dim: usize, bias: &[f64]) -> Self {
        let w = format!("{name}.weight");
        let b = format!("{name}.bias");
        store.init_const(&w, &[in_dim, bias.len()], 0.0);
        store.insert(&b, &[bias.len()], bias.to_vec());
        Linear {
            w,
            b,
            in_dim,
            out_dim: bias.len(),
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Var {
        x.matmul(&ctx.param(&self.w)).add_tiled(&ctx.param(&self.b))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    g: String,
    b: String,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let g = format!("{name}.gamma");
        let b = format!("{name}.beta");
        store.init_const(&g, &[dim], 1.0);
        store.init_const(&b, &[dim], 0.0);
        LayerNorm { g, b }
    }

    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Var {
        x.layer_norm(&ctx.param(&self.g), &ctx.param(&self.b), 1e-5)
    }
}

/// Square-kernel 2-D convolution on `(h, w, c)` grids via im2col.
#[derive(Debug, Clone)]
pub struct Conv2d {
    w: String,
    b: String,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let w = format!("{name}.weight");
        let b = format!("{name}.bias");
        let fan_in = kernel * kernel * in_ch;
        store.init_uniform(&w, &[fan_in, out_ch], fan_in, rng);
        store.init_const(&b, &[out_ch], 0.0);
        Conv2d {
            w,
            b,
            kernel,
            stride,
            pad,
            in_ch,
            out_ch,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |n: usize| (n + 2 * self.pad - self.kernel) / self.stride + 1;
        (f(h), f(w))
    }

    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Var {
        let s = x.shape();
        let (h, w, c) = (s[0], s[1], s[2]);
        assert_eq!(c, self.in_ch, "conv input channels");
        let (oh, ow) = self.out_dims(h, w);
        let k = self.kernel;
        let mut idx = Vec::with_capacity(oh * ow * k * k * c);
        for oi in 0..oh {
            for oj in 0..ow {
                for ki in 0..k {
                    for kj in 0..k {
                        let i = (oi * self.stride + ki) as isize - self.pad as isize;
                        let j = (oj * self.stride + kj) as isize - self.pad as isize;
                        let inside = i >= 0 && j >= 0 && (i as usize) < h && (j as usize) < w;
                        for ch in 0..c {
                            idx.push(if inside {
                                ((i as usize * w + j as usize) * c + ch) as isize
                            } else {
                                -1
                            });
                        }
                    }
                }
            }
        }
        let cols = x.gather(Rc::new(idx), &[oh, ow, k * k * c]);
        cols.matmul(&ctx.param(&self.w)).add_tiled(&ctx.param(&self.b))
    }
}

/// `(h, w, c)` → `(h/2, w/2, 4c)`: each output cell holds its 2×2 input block.
pub fn space_to_depth(x: &Var, f: usize) -> Var {
    let s = x.shape();
    let (h, w, c) = (s[0], s[1], s[2]);
    assert!(h % f == 0 && w % f == 0, "space_to_depth: {h}x{w} not divisible by {f}");
    let (oh, ow) = (h / f, w / f);
    let mut idx = Vec::with_capacity(x.len());
    for oi in 0..oh {
        for oj in 0..ow {
            for di in 0..f {
                for dj in 0..f {
                    for ch in 0..c {
                        idx.push((((oi * f + di) * w + oj * f + dj) * c + ch) as isize);
                    }
                }
            }
        }
    }
    x.gather(Rc::new(idx), &[oh, ow, f * f * c])
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space(x: &Var, f: usize) -> Var {
    let s = x.shape();
    let (h, w, cf) = (s[0], s[1], s[2]);
    assert_eq!(cf % (f * f), 0);
    let c = cf / (f * f);
    let (oh, ow) = (h * f, w * f);
    let mut idx = Vec::with_capacity(x.len());
    for i in 0..oh {
        for j in 0..ow {
            let (si, di) = (i / f, i % f);
            let (sj, dj) = (j / f, j % f);
            for ch in 0..c {
                idx.push(((si * w + sj) * cf + (di * f + dj) * c + ch) as isize);
            }
        }
    }
    x.gather(Rc::new(idx), &[oh, ow, c])
}

/// Keeps the top-left `h × w` corner of a grid.
pub fn crop(x: &Var, h: usize, w: usize) -> Var {
    let s = x.shape();
    let (sh, sw, c) = (s[0], s[1], s[2]);
    assert!(h <= sh && w <= sw);
    if h == sh && w == sw {
        return x.clone();
    }
    let mut idx = Vec::with_capacity(h * w * c);
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                idx.push(((i * sw + j) * c + ch) as isize);
            }
        }
    }
    x.gather(Rc::new(idx), &[h, w, c])
}

/// Mean over all spatial positions: `(h, w, c)` → `(c)`.
pub fn global_mean_pool(x: &Var) -> Var {
    let s = x.shape();
    let c = s[2];
    let n = s[0] * s[1];
    // (h*w, c) transposed to (c, h*w) then summed
    x.reshape(&[n, c]).permute(&[1, 0]).sum_last().scale(1.0 / n as f64)
}
