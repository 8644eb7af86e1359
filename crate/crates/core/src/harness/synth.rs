//! Synthetic correlated stereo pairs.
//!
//! Each pair samples a smooth procedural texture `f` twice: view 1 is `f(u)`
//! and view 2 is `f(G·u)` plus independent Gaussian pixel noise, for a random
//! homography `G` near the identity. The recorded homography is `M = G⁻¹`,
//! so warping view 2 by `M` reproduces view 1 up to interpolation error and
//! the border.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::alignment::{project, Homography};
use crate::error::{Error, Result};
use crate::grid::{Grid, RgbImage, StereoPair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    /// Largest translation in pixels; linear and perspective terms scale with it.
    pub homography_range: f64,
    /// Standard deviation of the pixel noise on view 2.
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 16,
            height: 64,
            width: 128,
            homography_range: 6.0,
            noise_level: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!("synthetic size {}x{} must be positive", self.height, self.width)));
        }
        if !(self.homography_range >= 0.0) || !(self.noise_level >= 0.0) {
            return Err(Error::Config("homography_range and noise_level must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthPair {
    pub pair: StereoPair,
    /// Maps view-1 pixel positions to sampling positions in view 2.
    pub homography: Homography,
}

#[derive(Debug, Clone)]
enum Feature {
    Blob { cx: f64, cy: f64, r: f64, amp: [f64; 3] },
    Grating { kx: f64, ky: f64, phase: f64, amp: [f64; 3] },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64, edge: f64, amp: [f64; 3] },
}

/// A continuous RGB texture over pixel coordinates `(col, row)`.
#[derive(Debug, Clone)]
pub struct Texture {
    base: [f64; 3],
    features: Vec<Feature>,
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl Texture {
    pub fn random<R: Rng>(h: usize, w: usize, rng: &mut R) -> Self {
        let (hf, wf) = (h as f64, w as f64);
        let scale = hf.min(wf) / 64.0;
        let amp = |rng: &mut R, a: f64| [rng.random_range(-a..a), rng.random_range(-a..a), rng.random_range(-a..a)];
        let base = [rng.random_range(0.3..0.7), rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)];
        let mut features = Vec::new();
        for _ in 0..6 {
            features.push(Feature::Blob {
                cx: rng.random_range(0.0..wf),
                cy: rng.random_range(0.0..hf),
                r: rng.random_range(6.0..18.0) * scale,
                amp: amp(rng, 0.35),
            });
        }
        for _ in 0..3 {
            let wavelength = rng.random_range(14.0..40.0) * scale;
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let k = 2.0 * std::f64::consts::PI / wavelength;
            features.push(Feature::Grating {
                kx: k * angle.cos(),
                ky: k * angle.sin(),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                amp: amp(rng, 0.12),
            });
        }
        for _ in 0..3 {
            let (x0, y0) = (rng.random_range(0.0..wf), rng.random_range(0.0..hf));
            features.push(Feature::Rect {
                x0,
                y0,
                x1: x0 + rng.random_range(8.0..32.0) * scale,
                y1: y0 + rng.random_range(8.0..24.0) * scale,
                edge: 3.0 * scale,
                amp: amp(rng, 0.3),
            });
        }
        Texture { base, features }
    }

    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let mut v = self.base;
        for f in &self.features {
            let (weight, amp) = match f {
                Feature::Blob { cx, cy, r, amp } => ((-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * r * r)).exp(), amp),
                Feature::Grating { kx, ky, phase, amp } => ((kx * x + ky * y + phase).sin(), amp),
                Feature::Rect { x0, y0, x1, y1, edge, amp } => {
                    let inside = |t: f64, a: f64, b: f64| smoothstep((t - a) / edge + 0.5) * smoothstep((b - t) / edge + 0.5);
                    (inside(x, *x0, *x1) * inside(y, *y0, *y1), amp)
                }
            };
            for c in 0..3 {
                v[c] += weight * amp[c];
            }
        }
        v.map(|t| 0.5 + 0.48 * (2.0 * (t - 0.5)).tanh())
    }

    /// Renders the texture at `G·u` for every pixel `u`.
    pub fn render(&self, h: usize, w: usize, g: &Homography) -> Result<Grid> {
        let mut out = Grid::zeros(h, w, 3);
        for i in 0..h {
            for j in 0..w {
                let (x, y) = project((j as f64, i as f64), g)?;
                let v = self.sample(x, y);
                for c in 0..3 {
                    *out.at_mut(i, j, c) = v[c];
                }
            }
        }
        Ok(out)
    }
}

/// Random homography about the image center with translation up to `range` pixels.
pub fn random_homography<R: Rng>(h: usize, w: usize, range: f64, rng: &mut R) -> Result<Homography> {
    if range == 0.0 {
        return Ok(Homography::identity());
    }
    let size = h.max(w) as f64;
    let lin = range / (2.0 * size);
    let persp = range / (4.0 * size * size);
    let mut u = |a: f64| rng.random_range(-a..=a);
    let a = Homography::from_params(&[1.0 + u(lin), u(lin), 0.0, u(lin), 1.0 + u(lin), 0.0, u(persp), u(persp)]);
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let shift = Homography::translation(u(range), u(range));
    shift
        .compose(&Homography::translation(cx, cy))?
        .compose(&a)?
        .compose(&Homography::translation(-cx, -cy))
}

/// Pair `index` of the stream described by `cfg`.
pub fn synth_pair(cfg: &SynthConfig, index: usize) -> Result<SynthPair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let (h, w) = (cfg.height, cfg.width);
    let texture = Texture::random(h, w, &mut rng);
    let g = random_homography(h, w, cfg.homography_range, &mut rng)?;
    let view1 = texture.render(h, w, &Homography::identity())?;
    let mut view2 = texture.render(h, w, &g)?;
    if cfg.noise_level > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_level).map_err(|e| Error::Config(e.to_string()))?;
        for v in view2.data.iter_mut() {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Ok(SynthPair {
        pair: StereoPair::new(RgbImage(view1), RgbImage(view2))?,
        homography: g.inverse()?,
    })
}

/// The first `cfg.n` pairs; a longer stream extends a shorter one with the same seed.
pub fn synth_pairs(cfg: &SynthConfig) -> Result<Vec<SynthPair>> {
    (0..cfg.n).map(|i| synth_pair(cfg, i)).collect()
}

/// Averages non-overlapping `factor × factor` blocks.
pub fn box_downsample(g: &Grid, factor: usize) -> Result<Grid> {
    if factor == 0 || g.h % factor != 0 || g.w % factor != 0 {
        return Err(Error::Shape(format!("{}x{} is not divisible by {factor}", g.h, g.w)));
    }
    let (h, w) = (g.h / factor, g.w / factor);
    let mut out = Grid::zeros(h, w, g.c);
    let norm = (factor * factor) as f64;
    for i in 0..g.h {
        for j in 0..g.w {
            for c in 0..g.c {
                *out.at_mut(i / factor, j / factor, c) += g.at(i, j, c) / norm;
            }
        }
    }
    Ok(out)
}

/// Expresses a pixel-grid homography on a grid downsampled by `factor`,
/// where latent position `q` covers pixel `factor·q + (factor − 1)/2`.
pub fn latent_homography(m: &Homography, factor: usize) -> Result<Homography> {
    let f = factor as f64;
    let c = (f - 1.0) / 2.0;
    let up = Homography::from_params(&[f, 0.0, c, 0.0, f, c, 0.0, 0.0]);
    up.inverse()?.compose(m)?.compose(&up)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::warp;
    use crate::transforms::Latent;

    fn interior_mse(a: &Grid, b: &Grid, margin: usize) -> f64 {
        let mut s = 0.0;
        let mut n = 0;
        for i in margin..a.h - margin {
            for j in margin..a.w - margin {
                for c in 0..a.c {
                    s += (a.at(i, j, c) - b.at(i, j, c)).powi(2);
                    n += 1;
                }
            }
        }
        s / n as f64
    }

    #[test]
    fn degenerate_config_gives_identical_views() {
        let cfg = SynthConfig {
            n: 2,
            homography_range: 0.0,
            noise_level: 0.0,
            ..SynthConfig::default()
        };
        for p in synth_pairs(&cfg).unwrap() {
            assert_eq!(p.pair.user1, p.pair.user2);
            assert_eq!(p.homography, Homography::identity());
        }
    }

    #[test]
    fn recorded_homography_recovers_view1() {
        let cfg = SynthConfig {
            n: 4,
            noise_level: 0.0,
            ..SynthConfig::default()
        };
        for p in synth_pairs(&cfg).unwrap() {
            let back = warp(&Latent(p.pair.user2.0.clone()), &p.homography).unwrap();
            let margin = cfg.homography_range.ceil() as usize + 4;
            let err = interior_mse(&back.0, &p.pair.user1.0, margin);
            let raw = interior_mse(&p.pair.user2.0, &p.pair.user1.0, margin);
            assert!(err < 1e-3, "warp round trip mse {err}");
            assert!(raw > 5.0 * err, "views are too similar to test: {raw} vs {err}");
        }
    }

    #[test]
    fn streams_are_deterministic_and_prefix_stable() {
        let cfg = SynthConfig { n: 3, height: 16, width: 32, ..SynthConfig::default() };
        let a = synth_pairs(&cfg).unwrap();
        let b = synth_pairs(&SynthConfig { n: 5, ..cfg.clone() }).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.pair, y.pair);
            assert_eq!(x.homography, y.homography);
        }
        let c = synth_pairs(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a[0].pair, c[0].pair);
    }

    #[test]
    fn latent_homography_matches_pixel_mapping() {
        let m = Homography::from_params(&[1.01, 0.02, 3.5, -0.01, 0.99, -2.0, 1e-4, -2e-4]);
        let f = 4;
        let ml = latent_homography(&m, f).unwrap();
        for &(qx, qy) in &[(0.0, 0.0), (3.0, 5.0), (10.5, 2.25)] {
            let c = (f as f64 - 1.0) / 2.0;
            let (px, py) = project((f as f64 * qx + c, f as f64 * qy + c), &m).unwrap();
            let (lx, ly) = project((qx, qy), &ml).unwrap();
            assert!((f as f64 * lx + c - px).abs() < 1e-9);
            assert!((f as f64 * ly + c - py).abs() < 1e-9);
        }
    }

    #[test]
    fn box_downsample_averages_blocks() {
        let g = Grid::new(2, 4, 1, vec![1.0, 3.0, 0.0, 0.0, 5.0, 7.0, 2.0, 2.0]).unwrap();
        let d = box_downsample(&g, 2).unwrap();
        assert_eq!(d.data, vec![4.0, 1.0]);
        assert!(box_downsample(&g, 3).is_err());
    }
}
