//! Projective alignment of the side latent onto the main latent's grid.
//!
//! Grid coordinates are pixel positions `u = (col, row, 1)` of the latent.
//! A [`Homography`] maps each output position to a sampling location in the
//! side latent, which is read with bilinear interpolation and zero fill.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::layers::{global_mean_pool, Conv2d, Linear};
use crate::nn::{Ctx, ParamStore, Var};
use crate::transforms::Latent;

/// Projections with `|d′|` below this are rejected.
pub const D_EPS: f64 = 1e-4;

const LOC_WIDTH: usize = 32;
const LOC_HIDDEN: usize = 32;
const IDENTITY8: [f64; 8] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
/// Bound on `|m31|·(w−1) + |m32|·(h−1)` for predicted homographies, keeping `d′ ≥ 1/2`.
const PERSPECTIVE_BOUND: f64 = 0.5;

/// A 3×3 projective matrix with `m33 = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    pub m: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Self::from_params(&IDENTITY8)
    }

    /// From `(m11, m12, m13, m21, m22, m23, m31, m32)`.
    pub fn from_params(p: &[f64]) -> Self {
        assert_eq!(p.len(), 8);
        Homography {
            m: [[p[0], p[1], p[2]], [p[3], p[4], p[5]], [p[6], p[7], 1.0]],
        }
    }

    /// Divides by `m33` so it becomes 1.
    pub fn normalized(m: [[f64; 3]; 3]) -> Result<Self> {
        let s = m[2][2];
        if s.abs() < 1e-12 {
            return Err(Error::Parameter("homography with m33 = 0 cannot be normalized".into()));
        }
        Ok(Homography {
            m: m.map(|row| row.map(|v| v / s)),
        })
    }

    pub fn params(&self) -> [f64; 8] {
        let m = &self.m;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1]]
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self::from_params(&[1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0])
    }

    /// `self · other` (apply `other` first), renormalized.
    pub fn compose(&self, other: &Homography) -> Result<Self> {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Self::normalized(r)
    }

    pub fn inverse(&self) -> Result<Self> {
        let m = &self.m;
        let cof = |a: usize, b: usize, c: usize, d: usize| m[a][b] * m[c][d] - m[a][d] * m[c][b];
        let adj = [
            [cof(1, 1, 2, 2), -cof(0, 1, 2, 2), cof(0, 1, 1, 2)],
            [-cof(1, 0, 2, 2), cof(0, 0, 2, 2), -cof(0, 0, 1, 2)],
            [cof(1, 0, 2, 1), -cof(0, 0, 2, 1), cof(0, 0, 1, 1)],
        ];
        let det = m[0][0] * adj[0][0] + m[0][1] * adj[1][0] + m[0][2] * adj[2][0];
        if det.abs() < 1e-12 {
            return Err(Error::Parameter("singular homography".into()));
        }
        Self::normalized(adj)
    }
}

/// Maps `(col, row)` through `m`; fails when `|d′| < D_EPS`.
pub fn project(u: (f64, f64), m: &Homography) -> Result<(f64, f64)> {
    let p = project_raw(u, &m.params());
    p.ok_or_else(|| Error::DegenerateProjection {
        index: 0,
        denom: m.m[2][0] * u.0 + m.m[2][1] * u.1 + 1.0,
    })
}

fn project_raw(u: (f64, f64), p: &[f64]) -> Option<(f64, f64)> {
    let d = p[6] * u.0 + p[7] * u.1 + 1.0;
    if d.abs() < D_EPS {
        return None;
    }
    Some(((p[0] * u.0 + p[1] * u.1 + p[2]) / d, (p[3] * u.0 + p[4] * u.1 + p[5]) / d))
}

/// Bilinear warp as a graph node: output `(i, j)` samples `side` at
/// `project((j, i), M)`. `params` holds the eight free entries of `M`.
pub fn warp_var(side: &Var, params: &Var) -> Result<Var> {
    let s = side.shape().to_vec();
    let (h, w, c) = (s[0], s[1], s[2]);
    assert_eq!(params.len(), 8, "homography parameters");
    let p: Vec<f64> = params.to_vec();
    let src = side.data_rc();

    // per output point: sampling position and its projective denominator
    let mut coords = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let u = (j as f64, i as f64);
            let (x, y) = project_raw(u, &p).ok_or_else(|| Error::DegenerateProjection {
                index: i * w + j,
                denom: p[6] * u.0 + p[7] * u.1 + 1.0,
            })?;
            coords.push((x, y, p[6] * u.0 + p[7] * u.1 + 1.0));
        }
    }
    let at = move |src: &[f64], yi: i64, xi: i64, ch: usize| -> f64 {
        if yi < 0 || xi < 0 || yi >= h as i64 || xi >= w as i64 {
            0.0
        } else {
            src[(yi as usize * w + xi as usize) * c + ch]
        }
    };
    let mut out = vec![0.0; h * w * c];
    for (k, &(x, y, _)) in coords.iter().enumerate() {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        for ch in 0..c {
            out[k * c + ch] = (1.0 - fy) * ((1.0 - fx) * at(&src, y0, x0, ch) + fx * at(&src, y0, x0 + 1, ch))
                + fy * ((1.0 - fx) * at(&src, y0 + 1, x0, ch) + fx * at(&src, y0 + 1, x0 + 1, ch));
        }
    }
    let src_b = src.clone();
    Ok(Var::from_op(vec![h, w, c], Rc::new(out), &[side, params], move |g| {
        let mut g_side = vec![0.0; h * w * c];
        let mut g_m = vec![0.0; 8];
        for (k, &(x, y, d)) in coords.iter().enumerate() {
            let (i, j) = ((k / w) as f64, (k % w) as f64);
            let (x0f, y0f) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0f, y - y0f);
            let (x0, y0) = (x0f as i64, y0f as i64);
            let corners = [
                (y0, x0, (1.0 - fy) * (1.0 - fx)),
                (y0, x0 + 1, (1.0 - fy) * fx),
                (y0 + 1, x0, fy * (1.0 - fx)),
                (y0 + 1, x0 + 1, fy * fx),
            ];
            let mut gx = 0.0;
            let mut gy = 0.0;
            for ch in 0..c {
                let go = g[k * c + ch];
                if go == 0.0 {
                    continue;
                }
                for &(yi, xi, wt) in &corners {
                    if yi >= 0 && xi >= 0 && yi < h as i64 && xi < w as i64 {
                        g_side[(yi as usize * w + xi as usize) * c + ch] += go * wt;
                    }
                }
                let v00 = at(&src_b, y0, x0, ch);
                let v01 = at(&src_b, y0, x0 + 1, ch);
                let v10 = at(&src_b, y0 + 1, x0, ch);
                let v11 = at(&src_b, y0 + 1, x0 + 1, ch);
                gx += go * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
                gy += go * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
            }
            g_m[0] += gx * j / d;
            g_m[1] += gx * i / d;
            g_m[2] += gx / d;
            g_m[3] += gy * j / d;
            g_m[4] += gy * i / d;
            g_m[5] += gy / d;
            g_m[6] -= (gx * x + gy * y) * j / d;
            g_m[7] -= (gx * x + gy * y) * i / d;
        }
        vec![Some(g_side), Some(g_m)]
    }))
}

/// Warps a side latent with a fixed homography.
pub fn warp(side: &Latent, m: &Homography) -> Result<Latent> {
    let v = warp_var(&side.0.to_var(), &Var::constant(&[8], m.params().to_vec()))?;
    Ok(Latent(Grid::from_var(&v)))
}

/// Localization network: three stride-2 convolutions, a global mean pool and
/// two dense layers emitting the eight free entries of `M`.
#[derive(Debug, Clone)]
pub struct Localizer {
    convs: [Conv2d; 3],
    fc1: Linear,
    fc2: Linear,
    channels: usize,
}

impl Localizer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, latent_channels: usize, rng: &mut R) -> Self {
        let c0 = 2 * latent_channels;
        let convs = [
            Conv2d::new(store, &format!("{name}.conv0"), c0, LOC_WIDTH, 3, 2, 1, rng),
            Conv2d::new(store, &format!("{name}.conv1"), LOC_WIDTH, LOC_WIDTH, 3, 2, 1, rng),
            Conv2d::new(store, &format!("{name}.conv2"), LOC_WIDTH, LOC_WIDTH, 3, 2, 1, rng),
        ];
        Localizer {
            convs,
            fc1: Linear::new(store, &format!("{name}.fc1"), LOC_WIDTH, LOC_HIDDEN, rng),
            fc2: Linear::new_const(store, &format!("{name}.fc2"), LOC_HIDDEN, &IDENTITY8),
            channels: latent_channels,
        }
    }

    /// Eight homography parameters from `(main, side)`, both `(h, w, C)`.
    ///
    /// The two perspective entries pass through a scaled `tanh`, so each
    /// contributes at most `PERSPECTIVE_BOUND / 2` to `d′` anywhere on the grid.
    pub fn forward_var(&self, ctx: &Ctx, main: &Var, side: &Var) -> Var {
        let (h, w) = (main.shape()[0], main.shape()[1]);
        let mut x = Var::concat(&[main, side], 2);
        for conv in &self.convs {
            x = conv.forward(ctx, &x).relu();
        }
        let pooled = global_mean_pool(&x).reshape(&[1, LOC_WIDTH]);
        let hdn = self.fc1.forward(ctx, &pooled).relu();
        let raw = self.fc2.forward(ctx, &hdn).reshape(&[8]);
        let parts = raw.split_last(&[6, 1, 1]);
        let bound = |p: &Var, len: usize| {
            let tanh = p.scale(2.0).sigmoid().scale(2.0).add_scalar(-1.0);
            tanh.scale(PERSPECTIVE_BOUND / (2.0 * (len.max(2) - 1) as f64))
        };
        Var::concat(&[&parts[0], &bound(&parts[1], w), &bound(&parts[2], h)], 0)
    }

    pub fn localize(&self, ctx: &Ctx, main: &Latent, side: &Latent) -> Result<Homography> {
        if !main.0.same_dims(&side.0) || main.0.c != self.channels {
            return Err(Error::Shape(format!(
                "localize: main {:?}, side {:?}, expected {} channels",
                main.0.dims(),
                side.0.dims(),
                self.channels
            )));
        }
        let p = self.forward_var(ctx, &main.0.to_var(), &side.0.to_var());
        Ok(Homography::from_params(p.data()))
    }

    /// Localizes and warps in one differentiable pass.
    pub fn align_var(&self, ctx: &Ctx, main: &Var, side: &Var) -> Result<Var> {
        let p = self.forward_var(ctx, main, side);
        warp_var(side, &p)
    }
}
