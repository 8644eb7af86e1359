//! Differentiable primitives on [`Var`].

use std::rc::Rc;

use super::graph::Var;

fn same_shape(a: &Var, b: &Var, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

fn map_unary(
    x: &Var,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Var {
    let out: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    let out = Rc::new(out);
    let xin = x.data_rc();
    let yout = out.clone();
    Var::from_op(x.shape().to_vec(), out, &[x], move |g| {
        let gx = g
            .iter()
            .zip(xin.iter().zip(yout.iter()))
            .map(|(gi, (&xi, &yi))| gi * df(xi, yi))
            .collect();
        vec![Some(gx)]
    })
}

/// `C[m,n] = A[m,k] · B[k,n]` with arbitrary strides; `c` is overwritten when `beta == 0`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            for i in 0..m {
                for j in 0..n {
                    c[i * rsc as usize + j * csc as usize] = 0.0;
                }
            }
        }
        return;
    }
    // SAFETY: callers pass slices covering every strided index touched by the
    // given dimensions; the asserts below check the extents.
    debug_assert!(a.len() >= (m - 1) * rsa as usize + (k - 1) * csa as usize + 1);
    debug_assert!(b.len() >= (k - 1) * rsb as usize + (n - 1) * csb as usize + 1);
    debug_assert!(c.len() >= (m - 1) * rsc as usize + (n - 1) * csc as usize + 1);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

impl Var {
    pub fn add(&self, other: &Var) -> Var {
        same_shape(self, other, "add");
        let out: Vec<f64> = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Var::from_op(self.shape().to_vec(), Rc::new(out), &[self, other], |g| {
            vec![Some(g.to_vec()), Some(g.to_vec())]
        })
    }

    pub fn sub(&self, other: &Var) -> Var {
        same_shape(self, other, "sub");
        let out: Vec<f64> = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Var::from_op(self.shape().to_vec(), Rc::new(out), &[self, other], |g| {
            vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]
        })
    }

    pub fn mul(&self, other: &Var) -> Var {
        same_shape(self, other, "mul");
        let out: Vec<f64> = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        let (a, b) = (self.data_rc(), other.data_rc());
        Var::from_op(self.shape().to_vec(), Rc::new(out), &[self, other], move |g| {
            let ga = g.iter().zip(b.iter()).map(|(g, b)| g * b).collect();
            let gb = g.iter().zip(a.iter()).map(|(g, a)| g * a).collect();
            vec![Some(ga), Some(gb)]
        })
    }

    pub fn div(&self, other: &Var) -> Var {
        same_shape(self, other, "div");
        let out: Vec<f64> = self.data().iter().zip(other.data()).map(|(a, b)| a / b).collect();
        let (a, b) = (self.data_rc(), other.data_rc());
        Var::from_op(self.shape().to_vec(), Rc::new(out), &[self, other], move |g| {
            let ga = g.iter().zip(b.iter()).map(|(g, b)| g / b).collect();
            let gb = g
                .iter()
                .zip(a.iter().zip(b.iter()))
                .map(|(g, (a, b))| -g * a / (b * b))
                .collect();
            vec![Some(ga), Some(gb)]
        })
    }

    /// Adds `other` repeated over the leading elements of `self`
    /// (`self.len()` must be a multiple of `other.len()`).
    pub fn add_tiled(&self, other: &Var) -> Var {
        let n = other.len();
        assert!(n > 0 && self.len() % n == 0, "add_tiled: {} not a multiple of {}", self.len(), n);
        let b = other.data();
        let out: Vec<f64> = self.data().iter().enumerate().map(|(i, a)| a + b[i % n]).collect();
        Var::from_op(self.shape().to_vec(), Rc::new(out), &[self, other], move |g| {
            let mut gb = vec![0.0; n];
            for (i, gi) in g.iter().enumerate() {
                gb[i % n] += gi;
            }
            vec![Some(g.to_vec()), Some(gb)]
        })
    }

    /// Multiplies by `other` repeated over the leading elements of `self`.
    pub fn mul_tiled(&self, other: &Var) -> Var {
        let n = other.len();
        assert!(n > 0 && self.len() % n == 0, "mul_tiled: {} not a multiple of {}", self.len(), n);
        let b = other.data();
        let out: Vec<f64> = self.data().iter().enumerate().map(|(i, a)| a * b[i % n]).collect();
        let (a, b) = (self.data_rc(), other.data_rc());
        Var::from_op(self.shape().to_vec(), Rc::new(out), &[self, other], move |g| {
            let mut gb = vec![0.0; n];
            let mut ga = vec![0.0; g.len()];
            for (i, gi) in g.iter().enumerate() {
                ga[i] = gi * b[i % n];
                gb[i % n] += gi * a[i];
            }
            vec![Some(ga), Some(gb)]
        })
    }

    pub fn scale(&self, c: f64) -> Var {
        map_unary(self, |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        map_unary(self, |v| v + c, |_, _| 1.0)
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn relu(&self) -> Var {
        map_unary(self, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self) -> Var {
        const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;
        let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        map_unary(
            self,
            |x| 0.5 * x * (1.0 + libm::erf(x * INV_SQRT2)),
            move |x, _| {
                let cdf = 0.5 * (1.0 + libm::erf(x * INV_SQRT2));
                cdf + x * inv_sqrt_2pi * (-0.5 * x * x).exp()
            },
        )
    }

    pub fn softplus(&self) -> Var {
        map_unary(
            self,
            |x| if x > 30.0 { x } else { x.exp().ln_1p() },
            |x, _| 1.0 / (1.0 + (-x).exp()),
        )
    }

    pub fn sigmoid(&self) -> Var {
        map_unary(self, |x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn exp(&self) -> Var {
        map_unary(self, f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Var {
        map_unary(self, f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Var {
        map_unary(self, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(&self) -> Var {
        map_unary(self, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn powf(&self, p: f64) -> Var {
        map_unary(self, move |x| x.powf(p), move |x, _| p * x.powf(p - 1.0))
    }

    /// Clamps into `[lo, hi]`; gradient is zero where clamped.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var {
        map_unary(
            self,
            move |x| x.clamp(lo, hi),
            move |x, _| if x >= lo && x <= hi { 1.0 } else { 0.0 },
        )
    }

    /// Clamps from below; gradient is zero where clamped.
    pub fn clamp_min(&self, lo: f64) -> Var {
        self.clamp(lo, f64::INFINITY)
    }

    pub fn sum(&self) -> Var {
        let s: f64 = self.data().iter().sum();
        let n = self.len();
        Var::from_op(vec![], Rc::new(vec![s]), &[self], move |g| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self) -> Var {
        let n = self.len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over the last axis.
    pub fn sum_last(&self) -> Var {
        let shape = self.shape();
        let last = *shape.last().expect("sum_last on a scalar");
        let rows = if last == 0 { 0 } else { self.len() / last };
        let out: Vec<f64> = (0..rows)
            .map(|r| self.data()[r * last..(r + 1) * last].iter().sum())
            .collect();
        Var::from_op(shape[..shape.len() - 1].to_vec(), Rc::new(out), &[self], move |g| {
            let mut gx = Vec::with_capacity(rows * last);
            for gr in g {
                gx.extend(std::iter::repeat_n(*gr, last));
            }
            vec![Some(gx)]
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.len(),
            "reshape {:?} -> {:?}",
            self.shape(),
            shape
        );
        Var::from_op(shape.to_vec(), self.data_rc(), &[self], |g| vec![Some(g.to_vec())])
    }

    /// `out[i] = self[index[i]]`, or zero where `index[i] < 0`.
    pub fn gather(&self, index: Rc<Vec<isize>>, shape: &[usize]) -> Var {
        assert_eq!(shape.iter().product::<usize>(), index.len(), "gather: index/shape mismatch");
        let src = self.data();
        let out: Vec<f64> = index
            .iter()
            .map(|&i| if i < 0 { 0.0 } else { src[i as usize] })
            .collect();
        let n = self.len();
        Var::from_op(shape.to_vec(), Rc::new(out), &[self], move |g| {
            let mut gx = vec![0.0; n];
            for (gi, &i) in g.iter().zip(index.iter()) {
                if i >= 0 {
                    gx[i as usize] += gi;
                }
            }
            vec![Some(gx)]
        })
    }

    /// Permutes axes; `perm[d]` names the source axis for output axis `d`.
    pub fn permute(&self, perm: &[usize]) -> Var {
        let shape = self.shape();
        assert_eq!(perm.len(), shape.len());
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let mut strides = vec![1usize; shape.len()];
        for d in (0..shape.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * shape[d + 1];
        }
        let n = self.len();
        let mut index = Vec::with_capacity(n);
        let mut counter = vec![0usize; shape.len()];
        for _ in 0..n {
            let src: usize = counter.iter().zip(perm).map(|(&c, &p)| c * strides[p]).sum();
            index.push(src as isize);
            for d in (0..counter.len()).rev() {
                counter[d] += 1;
                if counter[d] < out_shape[d] {
                    break;
                }
                counter[d] = 0;
            }
        }
        self.gather(Rc::new(index), &out_shape)
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[&Var], axis: usize) -> Var {
        assert!(!parts.is_empty());
        let base = parts[0].shape().to_vec();
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut total_axis = 0;
        for p in parts {
            let s = p.shape();
            assert_eq!(s.len(), base.len(), "concat rank mismatch");
            for d in 0..s.len() {
                if d != axis {
                    assert_eq!(s[d], base[d], "concat: dimension {d} mismatch");
                }
            }
            total_axis += s[axis];
        }
        let mut out = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for p in parts {
                let len = p.shape()[axis] * inner;
                out.extend_from_slice(&p.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = total_axis;
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let refs: Vec<&Var> = parts.to_vec();
        Var::from_op(shape, Rc::new(out), &refs, move |g| {
            let mut grads: Vec<Vec<f64>> = sizes.iter().map(|s| Vec::with_capacity(s * outer)).collect();
            let row: usize = sizes.iter().sum();
            for o in 0..outer {
                let mut off = o * row;
                for (gp, &s) in grads.iter_mut().zip(&sizes) {
                    gp.extend_from_slice(&g[off..off + s]);
                    off += s;
                }
            }
            grads.into_iter().map(Some).collect()
        })
    }

    /// Splits the last axis into consecutive chunks of the given widths.
    pub fn split_last(&self, widths: &[usize]) -> Vec<Var> {
        let shape = self.shape().to_vec();
        let last = *shape.last().unwrap();
        assert_eq!(widths.iter().sum::<usize>(), last);
        let rows = self.len() / last.max(1);
        let mut off = 0;
        widths
            .iter()
            .map(|&w| {
                let mut idx = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    for c in 0..w {
                        idx.push((r * last + off + c) as isize);
                    }
                }
                off += w;
                let mut s = shape.clone();
                *s.last_mut().unwrap() = w;
                self.gather(Rc::new(idx), &s)
            })
            .collect()
    }

    /// `(m,k) · (k,n)`. Higher-rank left operands are flattened over leading axes.
    pub fn matmul(&self, w: &Var) -> Var {
        let ws = w.shape();
        assert_eq!(ws.len(), 2, "matmul: right operand must be 2-D");
        let (k, n) = (ws[0], ws[1]);
        let xs = self.shape();
        assert_eq!(*xs.last().unwrap(), k, "matmul: inner dimension mismatch {xs:?} x {ws:?}");
        let m = self.len() / k.max(1);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(), k as isize, 1, w.data(), n as isize, 1, 0.0, &mut out, n as isize, 1);
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = n;
        let (a, b) = (self.data_rc(), w.data_rc());
        Var::from_op(shape, Rc::new(out), &[self, w], move |g| {
            // dA = G · Bᵀ ; dB = Aᵀ · G
            let mut ga = vec![0.0; m * k];
            gemm(m, n, k, g, n as isize, 1, &b, 1, n as isize, 0.0, &mut ga, k as isize, 1);
            let mut gb = vec![0.0; k * n];
            gemm(k, m, n, &a, 1, k as isize, g, n as isize, 1, 0.0, &mut gb, n as isize, 1);
            vec![Some(ga), Some(gb)]
        })
    }

    /// Batched `(B,m,k) · (B,k,n)`, or `(B,m,k) · (B,n,k)ᵀ` when `transpose_rhs`.
    pub fn bmm(&self, rhs: &Var, transpose_rhs: bool) -> Var {
        let (sa, sb) = (self.shape(), rhs.shape());
        assert_eq!(sa.len(), 3);
        assert_eq!(sb.len(), 3);
        assert_eq!(sa[0], sb[0], "bmm: batch mismatch");
        let (bsz, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_rhs { sb[1] } else { sb[2] };
        assert_eq!(if transpose_rhs { sb[2] } else { sb[1] }, k, "bmm: inner mismatch");
        // element (kk, j) of the logical right matrix lives at kk*rsb + j*csb
        let (rsb, csb) = if transpose_rhs { (1isize, k as isize) } else { (n as isize, 1isize) };
        let mut out = vec![0.0; bsz * m * n];
        for bi in 0..bsz {
            gemm(
                m,
                k,
                n,
                &self.data()[bi * m * k..(bi + 1) * m * k],
                k as isize,
                1,
                &rhs.data()[bi * k * n..(bi + 1) * k * n],
                rsb,
                csb,
                0.0,
                &mut out[bi * m * n..(bi + 1) * m * n],
                n as isize,
                1,
            );
        }
        let (a, b) = (self.data_rc(), rhs.data_rc());
        Var::from_op(vec![bsz, m, n], Rc::new(out), &[self, rhs], move |g| {
            let mut ga = vec![0.0; bsz * m * k];
            let mut gb = vec![0.0; bsz * k * n];
            for bi in 0..bsz {
                let gs = &g[bi * m * n..(bi + 1) * m * n];
                let bs = &b[bi * k * n..(bi + 1) * k * n];
                let as_ = &a[bi * m * k..(bi + 1) * m * k];
                // dA = G · Rᵀ where R is the logical right matrix
                gemm(m, n, k, gs, n as isize, 1, bs, csb, rsb, 0.0, &mut ga[bi * m * k..(bi + 1) * m * k], k as isize, 1);
                // dR = Aᵀ · G, stored back in the right operand's layout
                gemm(k, m, n, as_, 1, k as isize, gs, n as isize, 1, 0.0, &mut gb[bi * k * n..(bi + 1) * k * n], rsb, csb);
            }
            vec![Some(ga), Some(gb)]
        })
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&self) -> Var {
        let last = *self.shape().last().unwrap();
        let rows = self.len() / last.max(1);
        let mut out = vec![0.0; self.len()];
        for r in 0..rows {
            let x = &self.data()[r * last..(r + 1) * last];
            let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (o, &v) in out[r * last..(r + 1) * last].iter_mut().zip(x) {
                *o = (v - mx).exp();
                s += *o;
            }
            out[r * last..(r + 1) * last].iter_mut().for_each(|o| *o /= s);
        }
        let out = Rc::new(out);
        let y = out.clone();
        Var::from_op(self.shape().to_vec(), out, &[self], move |g| {
            let mut gx = vec![0.0; g.len()];
            for r in 0..rows {
                let ys = &y[r * last..(r + 1) * last];
                let gs = &g[r * last..(r + 1) * last];
                let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                for i in 0..last {
                    gx[r * last + i] = ys[i] * (gs[i] - dot);
                }
            }
            vec![Some(gx)]
        })
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: &Var, beta: &Var, eps: f64) -> Var {
        let c = *self.shape().last().unwrap();
        assert_eq!(gamma.len(), c);
        assert_eq!(beta.len(), c);
        let rows = self.len() / c.max(1);
        let mut xhat = vec![0.0; self.len()];
        let mut inv_std = vec![0.0; rows];
        let x = self.data();
        for r in 0..rows {
            let xs = &x[r * c..(r + 1) * c];
            let mean = xs.iter().sum::<f64>() / c as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for i in 0..c {
                xhat[r * c + i] = (xs[i] - mean) * is;
            }
        }
        let gm = gamma.data();
        let bt = beta.data();
        let out: Vec<f64> = xhat.iter().enumerate().map(|(i, v)| v * gm[i % c] + bt[i % c]).collect();
        let gmr = gamma.data_rc();
        Var::from_op(self.shape().to_vec(), Rc::new(out), &[self, gamma, beta], move |g| {
            let mut gx = vec![0.0; g.len()];
            let mut gg = vec![0.0; c];
            let mut gbeta = vec![0.0; c];
            for r in 0..rows {
                let mut sum_d = 0.0;
                let mut sum_dx = 0.0;
                for i in 0..c {
                    let idx = r * c + i;
                    gg[i] += g[idx] * xhat[idx];
                    gbeta[i] += g[idx];
                    let d = g[idx] * gmr[i];
                    sum_d += d;
                    sum_dx += d * xhat[idx];
                }
                let cf = c as f64;
                for i in 0..c {
                    let idx = r * c + i;
                    let d = g[idx] * gmr[i];
                    gx[idx] = inv_std[r] * (d - sum_d / cf - xhat[idx] * sum_dx / cf);
                }
            }
            vec![Some(gx), Some(gg), Some(gbeta)]
        })
    }
}
