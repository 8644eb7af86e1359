//! Distortion measures on `[0, 1]` images: MSE and 1 − MS-SSIM.
//!
//! MS-SSIM has two implementations. [`ms_ssim`] works on plain arrays with
//! direct 2-D filtering, [`ms_ssim_var`] builds the same quantity from graph
//! operations (separable filtering as matrix products) so it can be trained on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::Var;

/// Standard five-scale exponents.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// Floor applied to per-scale terms before the fractional powers.
const TERM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    Mse,
    MsSsim,
}

impl std::str::FromStr for DistortionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(DistortionKind::Mse),
            "ms_ssim" | "ms-ssim" => Ok(DistortionKind::MsSsim),
            _ => Err(Error::Config(format!("unknown distortion kind {s:?}"))),
        }
    }
}

fn check_pair(x: &Grid, y: &Grid) -> Result<()> {
    if !x.same_dims(y) {
        return Err(Error::Shape(format!("distortion inputs {:?} vs {:?}", x.dims(), y.dims())));
    }
    if x.is_empty() {
        return Err(Error::Shape("distortion of empty images".into()));
    }
    Ok(())
}

pub fn mse(x: &Grid, y: &Grid) -> Result<f64> {
    check_pair(x, y)?;
    Ok(x.data.iter().zip(&y.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
}

pub fn distortion(x: &Grid, y: &Grid, kind: DistortionKind) -> Result<f64> {
    match kind {
        DistortionKind::Mse => mse(x, y),
        DistortionKind::MsSsim => Ok(1.0 - ms_ssim(x, y)?),
    }
}

/// Window length used at a scale of size `h × w`: 11, shrunk to the largest
/// odd length that fits.
fn window_len(h: usize, w: usize) -> usize {
    let m = WINDOW.min(h).min(w);
    if m % 2 == 0 {
        m - 1
    } else {
        m
    }
}

fn gaussian_window(n: usize) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// One channel plane.
#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn channel(g: &Grid, ch: usize) -> Plane {
        Plane {
            h: g.h,
            w: g.w,
            v: (0..g.h * g.w).map(|i| g.data[i * g.c + ch]).collect(),
        }
    }

    fn map2(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            h: self.h,
            w: self.w,
            v: self.v.iter().zip(&o.v).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// Valid 2-D filtering with the outer product window.
    fn filter(&self, g: &[f64]) -> Plane {
        let n = g.len();
        let (oh, ow) = (self.h + 1 - n, self.w + 1 - n);
        let mut v = vec![0.0; oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let mut s = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        s += g[a] * g[b] * self.v[(i + a) * self.w + j + b];
                    }
                }
                v[i * ow + j] = s;
            }
        }
        Plane { h: oh, w: ow, v }
    }

    fn pool(&self) -> Plane {
        let (oh, ow) = (self.h / 2, self.w / 2);
        let mut v = vec![0.0; oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let at = |a: usize, b: usize| self.v[(2 * i + a) * self.w + 2 * j + b];
                v[i * ow + j] = 0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1));
            }
        }
        Plane { h: oh, w: ow, v }
    }
}

/// `(ssim, cs)` means of one scale.
fn ssim_terms(x: &Plane, y: &Plane) -> (f64, f64) {
    let g = gaussian_window(window_len(x.h, x.w));
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mx = x.filter(&g);
    let my = y.filter(&g);
    let sxx = x.map2(x, |a, b| a * b).filter(&g);
    let syy = y.map2(y, |a, b| a * b).filter(&g);
    let sxy = x.map2(y, |a, b| a * b).filter(&g);
    let n = mx.v.len();
    let (mut ss, mut cs) = (0.0, 0.0);
    for i in 0..n {
        let (a, b) = (mx.v[i], my.v[i]);
        let vx = sxx.v[i] - a * a;
        let vy = syy.v[i] - b * b;
        let cxy = sxy.v[i] - a * b;
        let c = (2.0 * cxy + c2) / (vx + vy + c2);
        cs += c;
        ss += c * (2.0 * a * b + c1) / (a * a + b * b + c1);
    }
    (ss / n as f64, cs / n as f64)
}

/// Five-scale MS-SSIM averaged over channels; 1 for identical inputs.
pub fn ms_ssim(x: &Grid, y: &Grid) -> Result<f64> {
    check_pair(x, y)?;
    if x.h < 16 || x.w < 16 {
        return Err(Error::Shape(format!("MS-SSIM needs at least 16x16, got {}x{}", x.h, x.w)));
    }
    let mut total = 0.0;
    for ch in 0..x.c {
        let (mut px, mut py) = (Plane::channel(x, ch), Plane::channel(y, ch));
        let mut score = 1.0;
        for (s, &wt) in MS_SSIM_WEIGHTS.iter().enumerate() {
            let (ss, cs) = ssim_terms(&px, &py);
            let term = if s == 4 { ss } else { cs };
            score *= term.max(TERM_FLOOR).powf(wt);
            if s < 4 {
                px = px.pool();
                py = py.pool();
            }
        }
        total += score;
    }
    Ok(total / x.c as f64)
}

/// Banded `(n, n − len + 1)` matrix applying the window along one axis.
fn filter_matrix(n: usize, g: &[f64]) -> Var {
    let m = n + 1 - g.len();
    let mut d = vec![0.0; n * m];
    for j in 0..m {
        for (a, &gv) in g.iter().enumerate() {
            d[(j + a) * m + j] = gv;
        }
    }
    Var::constant(&[n, m], d)
}

fn pool_matrix(n: usize) -> Var {
    let m = n / 2;
    let mut d = vec![0.0; n * m];
    for j in 0..m {
        d[2 * j * m + j] = 0.5;
        d[(2 * j + 1) * m + j] = 0.5;
    }
    Var::constant(&[n, m], d)
}

/// Applies `a` along the last axis and `b` along the middle axis of `(c, h, w)`.
fn separable(x: &Var, along_h: &Var, along_w: &Var) -> Var {
    x.matmul(along_w).permute(&[0, 2, 1]).matmul(along_h).permute(&[0, 2, 1])
}

fn channel_means(x: &Var) -> Var {
    let s = x.shape().to_vec();
    let n = s[1] * s[2];
    x.reshape(&[s[0], n]).sum_last().scale(1.0 / n as f64)
}

/// Differentiable MS-SSIM of two `(h, w, c)` variables, averaged over channels.
pub fn ms_ssim_var(x: &Var, y: &Var) -> Var {
    assert_eq!(x.shape(), y.shape(), "MS-SSIM inputs differ in shape");
    let (c1, c2) = (K1 * K1, K2 * K2);
    let c = x.shape()[2];
    let mut px = x.permute(&[2, 0, 1]);
    let mut py = y.permute(&[2, 0, 1]);
    let mut score: Option<Var> = None;
    for (s, &wt) in MS_SSIM_WEIGHTS.iter().enumerate() {
        let (h, w) = (px.shape()[1], px.shape()[2]);
        let g = gaussian_window(window_len(h, w));
        let (fh, fw) = (filter_matrix(h, &g), filter_matrix(w, &g));
        let blur = |v: &Var| separable(v, &fh, &fw);
        let mx = blur(&px);
        let my = blur(&py);
        let vx = blur(&px.square()).sub(&mx.square());
        let vy = blur(&py.square()).sub(&my.square());
        let cxy = blur(&px.mul(&py)).sub(&mx.mul(&my));
        let cs_map = cxy.scale(2.0).add_scalar(c2).div(&vx.add(&vy).add_scalar(c2));
        let map = if s == 4 {
            let lum = mx.mul(&my).scale(2.0).add_scalar(c1).div(&mx.square().add(&my.square()).add_scalar(c1));
            cs_map.mul(&lum)
        } else {
            cs_map
        };
        let term = channel_means(&map).clamp_min(TERM_FLOOR).powf(wt);
        score = Some(match score {
            None => term,
            Some(acc) => acc.mul(&term),
        });
        if s < 4 {
            let (ph, pw) = (pool_matrix(h), pool_matrix(w));
            px = separable(&px, &ph, &pw);
            py = separable(&py, &ph, &pw);
        }
    }
    score.unwrap().sum().scale(1.0 / c as f64)
}

pub fn mse_var(x: &Var, y: &Var) -> Var {
    x.sub(y).square().mean()
}

pub fn distortion_var(x: &Var, y: &Var, kind: DistortionKind) -> Var {
    match kind {
        DistortionKind::Mse => mse_var(x, y),
        DistortionKind::MsSsim => ms_ssim_var(x, y).neg().add_scalar(1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;

    fn texture(h: usize, w: usize, phase: f64) -> Grid {
        let mut g = Grid::zeros(h, w, 3);
        for i in 0..h {
            for j in 0..w {
                for ch in 0..3 {
                    let v = 0.5
                        + 0.3 * ((i as f64 * 0.31 + phase).sin() * (j as f64 * 0.17 + ch as f64).cos())
                        + 0.1 * ((i * j + ch) as f64 * 0.013).sin();
                    *g.at_mut(i, j, ch) = v;
                }
            }
        }
        g
    }

    #[test]
    fn identity_and_offset() {
        let x = texture(32, 48, 0.0);
        assert_eq!(mse(&x, &x).unwrap(), 0.0);
        assert!((ms_ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!(distortion(&x, &x, DistortionKind::MsSsim).unwrap().abs() < 1e-12);
        let mut y = x.clone();
        y.data.iter_mut().for_each(|v| *v += 0.1);
        assert!((mse(&x, &y).unwrap() - 0.01).abs() < 1e-15);
        assert!(mse(&x, &texture(32, 40, 0.0)).is_err());
    }

    #[test]
    fn ms_ssim_routes_agree() {
        for (h, w) in [(16, 32), (64, 128), (40, 24)] {
            let x = texture(h, w, 0.0);
            let y = texture(h, w, 0.4);
            let a = ms_ssim(&x, &y).unwrap();
            let b = ms_ssim_var(&x.to_var(), &y.to_var()).item();
            assert!((a - b).abs() < 1e-12, "{h}x{w}: {a} vs {b}");
            assert!(a < 1.0 && a > 0.0);
        }
    }

    #[test]
    fn ms_ssim_drops_with_noise() {
        let x = texture(64, 64, 0.0);
        let mut prev = 1.0;
        for amp in [0.02, 0.05, 0.1, 0.2] {
            let mut y = x.clone();
            for (i, v) in y.data.iter_mut().enumerate() {
                *v += amp * ((i * 7919 % 101) as f64 / 50.0 - 1.0);
            }
            let s = ms_ssim(&x, &y).unwrap();
            assert!(s < prev);
            prev = s;
        }
    }

    #[test]
    fn ms_ssim_gradient() {
        let x = texture(16, 16, 0.0);
        let y = texture(16, 16, 0.7);
        let gc = gradcheck::check(
            |v| ms_ssim_var(&v[0], &Var::constant(&[16, 16, 3], y.data.clone())),
            &[(vec![16, 16, 3], x.data.clone())],
            40,
            1e-6,
            1e-8,
        );
        assert!(gc.max_rel_err < 1e-4, "{gc:?}");
    }
}
