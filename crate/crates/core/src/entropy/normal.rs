//! Univariate and bivariate normal probabilities.
//!
//! The bivariate orthant probability follows Genz's `BVND` (Drezner and
//! Wesolowsky with Gauss–Legendre quadrature and a series expansion for
//! `|ρ|` near one), which is accurate to roughly 1e-15 absolute.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const TWO_PI: f64 = 2.0 * PI;

/// `Φ(x)`.
pub fn std_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `1 − Φ(x)` without cancellation.
pub fn std_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `φ(x)`.
pub fn std_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / TWO_PI.sqrt()
}

/// `Φ(b) − Φ(a)` for `a ≤ b`, evaluated in whichever tail avoids cancellation.
pub fn interval_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        std_sf(a) - std_sf(b)
    } else {
        std_cdf(b) - std_cdf(a)
    }
}

// Gauss–Legendre (weight, node) pairs for 6, 12 and 20 points; nodes in (−1, 0).
const GL6: [(f64, f64); 3] = [
    (0.1713244923791705, -0.9324695142031522),
    (0.3607615730481384, -0.6612093864662647),
    (0.4679139345726904, -0.2386191860831970),
];
const GL12: [(f64, f64); 6] = [
    (0.4717533638651177e-1, -0.9815606342467191),
    (0.1069393259953183, -0.9041172563704750),
    (0.1600783285433464, -0.7699026741943050),
    (0.2031674267230659, -0.5873179542866171),
    (0.2334925365383547, -0.3678314989981802),
    (0.2491470458134029, -0.1252334085114692),
];
const GL20: [(f64, f64); 10] = [
    (0.1761400713915212e-1, -0.9931285991850949),
    (0.4060142980038694e-1, -0.9639719272779138),
    (0.6267204833410906e-1, -0.9122344282513259),
    (0.8327674157670475e-1, -0.8391169718222188),
    (0.1019301198172404, -0.7463319064601508),
    (0.1181945319615184, -0.6360536807265150),
    (0.1316886384491766, -0.5108670019508271),
    (0.1420961093183821, -0.3737060887154196),
    (0.1491729864726037, -0.2277858511416451),
    (0.1527533871307259, -0.7652652113349733e-1),
];

/// `P(X > h, Y > k)` for standard bivariate normal `(X, Y)` with correlation `r`.
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    let quad: &[(f64, f64)] = if r.abs() < 0.3 {
        &GL6
    } else if r.abs() < 0.75 {
        &GL12
    } else {
        &GL20
    };
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for &(w, x) in quad {
            for s in [1.0, -1.0] {
                let sn = (asr * (s * x + 1.0) / 2.0).sin();
                bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        return bvn * asr / (2.0 * TWO_PI) + std_cdf(-h) * std_cdf(-k);
    }
    let k = if r < 0.0 {
        hk = -hk;
        -k
    } else {
        k
    };
    if r.abs() < 1.0 {
        let as_ = (1.0 - r) * (1.0 + r);
        let mut a = as_.sqrt();
        let bs = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        bvn = a
            * (-(bs / as_ + hk) / 2.0).exp()
            * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
        if hk > -160.0 {
            let b = bs.sqrt();
            bvn -= (-hk / 2.0).exp() * TWO_PI.sqrt() * std_cdf(-b / a) * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a /= 2.0;
        for &(w, x) in quad {
            for s in [1.0, -1.0] {
                let xs = (a * (s * x + 1.0)).powi(2);
                let rs = (1.0 - xs).sqrt();
                let asr = -(bs / xs + hk) / 2.0;
                if asr > -100.0 {
                    bvn += a
                        * w
                        * asr.exp()
                        * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs - (1.0 + c * xs * (1.0 + d * xs)));
                }
            }
        }
        bvn = -bvn / TWO_PI;
    }
    if r > 0.0 {
        bvn + std_cdf(-h.max(k))
    } else {
        let mut v = -bvn;
        if k > h {
            if h < 0.0 {
                v += std_cdf(k) - std_cdf(h);
            } else {
                v += std_cdf(-h) - std_cdf(-k);
            }
        }
        v
    }
}

/// `P(X ≤ h, Y ≤ k)`.
pub fn bvn_cdf(h: f64, k: f64, r: f64) -> f64 {
    bvn_upper(-h, -k, r)
}

/// Standard bivariate normal density.
pub fn bvn_pdf(x: f64, y: f64, r: f64) -> f64 {
    let om = 1.0 - r * r;
    (-(x * x - 2.0 * r * x * y + y * y) / (2.0 * om)).exp() / (TWO_PI * om.sqrt())
}

/// Probability of `[a1, b1] × [a2, b2]` under a standard bivariate normal
/// with correlation `r`.
///
/// Axes are reflected so the rectangle sits in the upper orthant region,
/// where the orthant probabilities are small and their differences do not
/// cancel catastrophically.
pub fn rect_mass(a1: f64, b1: f64, a2: f64, b2: f64, r: f64) -> f64 {
    let (mut a1, mut b1, mut a2, mut b2, mut r) = (a1, b1, a2, b2, r);
    if a1 + b1 < 0.0 {
        (a1, b1) = (-b1, -a1);
        r = -r;
    }
    if a2 + b2 < 0.0 {
        (a2, b2) = (-b2, -a2);
        r = -r;
    }
    let m = bvn_upper(a1, a2, r) - bvn_upper(b1, a2, r) - bvn_upper(a1, b2, r) + bvn_upper(b1, b2, r);
    m.max(0.0)
}

/// Partial derivatives of [`rect_mass`] with respect to `(a1, b1, a2, b2, r)`.
pub fn rect_mass_grad(a1: f64, b1: f64, a2: f64, b2: f64, r: f64) -> [f64; 5] {
    let s = (1.0 - r * r).sqrt();
    // ∂/∂b1 = φ(b1)·P(a2 < Y < b2 | X = b1)
    let cond1 = |x: f64| interval_mass((a2 - r * x) / s, (b2 - r * x) / s);
    let cond2 = |y: f64| interval_mass((a1 - r * y) / s, (b1 - r * y) / s);
    let d_b1 = std_pdf(b1) * cond1(b1);
    let d_a1 = -std_pdf(a1) * cond1(a1);
    let d_b2 = std_pdf(b2) * cond2(b2);
    let d_a2 = -std_pdf(a2) * cond2(a2);
    let d_r = bvn_pdf(b1, b2, r) - bvn_pdf(a1, b2, r) - bvn_pdf(b1, a2, r) + bvn_pdf(a1, a2, r);
    [d_a1, d_b1, d_a2, d_b2, d_r]
}
