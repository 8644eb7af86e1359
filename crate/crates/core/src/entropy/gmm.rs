//! Pairwise Gaussian-mixture model for the two users' hyperpriors.
//!
//! Element `j` of `z1` and element `j` of `z2` are modelled jointly by a
//! bivariate mixture. Parameters are shared across spatial positions and
//! indexed by channel, so the model size is independent of image size.

use std::f64::consts::PI;
use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::gaussian::{bits_var, interval_mass_var, rect_mass_var, LIKELIHOOD_FLOOR};
use super::normal::{bvn_pdf, interval_mass, rect_mass};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::{Ctx, ParamStore, Var};
use crate::transforms::{Hyperprior, SIGMA_MIN};

/// Component correlations are clamped to `[−RHO_MAX, RHO_MAX]`.
pub const RHO_MAX: f64 = 0.999;

/// Initial per-axis standard deviation of every component.
const INIT_SIGMA: f64 = 2.0;

/// One bivariate normal component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: [f64; 2],
    pub sigma: [f64; 2],
    pub rho: f64,
}

impl Component {
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let c = self.rho * self.sigma[0] * self.sigma[1];
        [[self.sigma[0] * self.sigma[0], c], [c, self.sigma[1] * self.sigma[1]]]
    }

    fn std_bounds(&self, t: f64, axis: usize) -> (f64, f64) {
        (
            (t - 0.5 - self.mean[axis]) / self.sigma[axis],
            (t + 0.5 - self.mean[axis]) / self.sigma[axis],
        )
    }

    fn marginal_pdf(&self, x: f64, axis: usize) -> f64 {
        let d = (x - self.mean[axis]) / self.sigma[axis];
        (-0.5 * d * d).exp() / ((2.0 * PI).sqrt() * self.sigma[axis])
    }
}

/// The mixture for one element pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairModel {
    components: Vec<Component>,
}

impl PairModel {
    /// Validates weights, scales and correlations.
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Parameter("mixture needs at least one component".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 || components.iter().any(|c| !(c.weight >= 0.0)) {
            return Err(Error::Parameter(format!("mixture weights sum to {total}")));
        }
        for c in &components {
            if !(c.sigma[0] > 0.0 && c.sigma[1] > 0.0) || !(c.rho.abs() <= RHO_MAX) {
                return Err(Error::Parameter(format!("invalid component {c:?}")));
            }
        }
        Ok(PairModel { components })
    }

    /// One standard component with correlation `rho`.
    pub fn standard(rho: f64) -> Self {
        PairModel {
            components: vec![Component {
                weight: 1.0,
                mean: [0.0, 0.0],
                sigma: [1.0, 1.0],
                rho,
            }],
        }
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn pdf(&self, z1: f64, z2: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let x = (z1 - c.mean[0]) / c.sigma[0];
                let y = (z2 - c.mean[1]) / c.sigma[1];
                c.weight * bvn_pdf(x, y, c.rho) / (c.sigma[0] * c.sigma[1])
            })
            .sum()
    }

    /// Mass of the unit square centred on `(t1, t2)`; also the convolved
    /// density when the centre is not an integer.
    pub fn bin_pmf(&self, t1: f64, t2: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let (a1, b1) = c.std_bounds(t1, 0);
                let (a2, b2) = c.std_bounds(t2, 1);
                c.weight * rect_mass(a1, b1, a2, b2, c.rho)
            })
            .sum()
    }

    /// Mass of `[t − ½, t + ½]` under the marginal of `axis` (0 for user 1).
    pub fn marginal_bin_pmf(&self, axis: usize, t: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let (a, b) = c.std_bounds(t, axis);
                c.weight * interval_mass(a, b)
            })
            .sum()
    }

    /// Mean of the marginal on `axis`.
    pub fn marginal_mean(&self, axis: usize) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean[axis]).sum()
    }

    /// `E[z_other | z_axis = x]`.
    pub fn conditional_mean(&self, axis: usize, x: f64) -> f64 {
        let other = 1 - axis;
        let mut num = 0.0;
        let mut den = 0.0;
        // weights ∝ π_k N(x; m_k, σ_k²), normalized through the largest log-weight
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.marginal_pdf(x, axis).max(f64::MIN_POSITIVE).ln())
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (c, l) in self.components.iter().zip(&logs) {
            let w = (l - top).exp();
            let cond = c.mean[other] + c.rho * c.sigma[other] / c.sigma[axis] * (x - c.mean[axis]);
            num += w * cond;
            den += w;
        }
        num / den
    }
}

/// Per-channel pair models.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHyperModel {
    pairs: Vec<PairModel>,
    factorized: bool,
}

impl JointHyperModel {
    pub fn new(pairs: Vec<PairModel>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Parameter("joint model has no channels".into()));
        }
        let k = pairs[0].components.len();
        if pairs.iter().any(|p| p.components.len() != k) {
            return Err(Error::Parameter("mixture count differs across channels".into()));
        }
        Ok(JointHyperModel { pairs, factorized: false })
    }

    /// Replaces every pair density by the product of its two marginals,
    /// `p(z1)·p(z2)`, so the users' hyperpriors are modelled as independent.
    pub fn factorized(mut self) -> Self {
        self.factorized = true;
        self
    }

    pub fn is_factorized(&self) -> bool {
        self.factorized
    }

    /// Bin mass of one element pair under this model.
    pub fn bin_pmf(&self, channel: usize, t1: f64, t2: f64) -> f64 {
        let p = &self.pairs[channel];
        if self.factorized {
            p.marginal_bin_pmf(0, t1) * p.marginal_bin_pmf(1, t2)
        } else {
            p.bin_pmf(t1, t2)
        }
    }

    pub fn channels(&self) -> usize {
        self.pairs.len()
    }

    pub fn mixtures(&self) -> usize {
        self.pairs[0].components.len()
    }

    pub fn pair(&self, channel: usize) -> &PairModel {
        &self.pairs[channel]
    }

    fn check(&self, z: &Grid) -> Result<()> {
        if z.c != self.channels() {
            return Err(Error::Shape(format!(
                "hyperprior has {} channels, model has {}",
                z.c,
                self.channels()
            )));
        }
        Ok(())
    }
}

/// `−log2` of the joint bin mass for every element pair.
pub fn joint_hyper_element_bits(z1: &Hyperprior, z2: &Hyperprior, model: &JointHyperModel) -> Result<Vec<f64>> {
    if !z1.0.same_dims(&z2.0) {
        return Err(Error::Shape(format!("hyperpriors {:?} vs {:?}", z1.0.dims(), z2.0.dims())));
    }
    model.check(&z1.0)?;
    let c = model.channels();
    Ok(z1
        .0
        .data
        .iter()
        .zip(&z2.0.data)
        .enumerate()
        .map(|(i, (&a, &b))| -model.bin_pmf(i % c, a, b).max(LIKELIHOOD_FLOOR).log2())
        .collect())
}

/// Joint code length of the two quantized hyperpriors in bits.
pub fn joint_hyper_entropy_bits(z1: &Hyperprior, z2: &Hyperprior, model: &JointHyperModel) -> Result<f64> {
    Ok(joint_hyper_element_bits(z1, z2, model)?.iter().sum())
}

/// MMSE estimate of the peer's hyperprior given one's own (`own_user` 0 or 1).
pub fn mmse_peer_estimate(own: &Hyperprior, own_user: usize, model: &JointHyperModel) -> Result<Hyperprior> {
    model.check(&own.0)?;
    let c = model.channels();
    let data = own
        .0
        .data
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let p = &model.pairs[i % c];
            if model.factorized {
                p.marginal_mean(1 - own_user)
            } else {
                p.conditional_mean(own_user, x)
            }
        })
        .collect();
    Ok(Hyperprior(Grid::new(own.0.h, own.0.w, own.0.c, data)?))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inv(y: f64) -> f64 {
    y.exp_m1().ln()
}

/// Trainable parameters of a [`JointHyperModel`].
///
/// Raw tensors: `logits (C, K)`, `means (C, K, 2)` and Cholesky factors
/// `chol (C, K, 3)` holding `(l11, l21, l22)` with softplus on the diagonal.
#[derive(Debug, Clone)]
pub struct HyperGmm {
    logits: String,
    means: String,
    chol: String,
    pub channels: usize,
    pub mixtures: usize,
    /// Models the pair as the product of its marginals (independence ablation).
    pub independent: bool,
}

impl HyperGmm {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        mixtures: usize,
        independent: bool,
        rng: &mut R,
    ) -> Self {
        let logits = format!("{name}.logits");
        let means = format!("{name}.means");
        let chol = format!("{name}.chol");
        store.init_const(&logits, &[channels, mixtures], 0.0);
        let spread = Normal::new(0.0, 1.0).unwrap();
        let m: Vec<f64> = (0..channels * mixtures * 2)
            .map(|_| if mixtures > 1 { spread.sample(rng) } else { 0.0 })
            .collect();
        store.insert(&means, &[channels, mixtures, 2], m);
        let d = softplus_inv(INIT_SIGMA);
        let l: Vec<f64> = (0..channels * mixtures).flat_map(|_| [d, 0.0, d]).collect();
        store.insert(&chol, &[channels, mixtures, 3], l);
        HyperGmm {
            logits,
            means,
            chol,
            channels,
            mixtures,
            independent,
        }
    }

    /// Reads the current parameters into an immutable model.
    pub fn model(&self, store: &ParamStore) -> Result<JointHyperModel> {
        let get = |n: &str| {
            store
                .get(n)
                .map(|p| p.data.clone())
                .ok_or_else(|| Error::Parameter(format!("missing {n}")))
        };
        let (logits, means, chol) = (get(&self.logits)?, get(&self.means)?, get(&self.chol)?);
        let k = self.mixtures;
        let mut pairs = Vec::with_capacity(self.channels);
        for ch in 0..self.channels {
            let lg = &logits[ch * k..(ch + 1) * k];
            let top = lg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = lg.iter().map(|v| (v - top).exp()).collect();
            let z: f64 = ex.iter().sum();
            let comps = (0..k)
                .map(|i| {
                    let ci = ch * k + i;
                    let s1 = softplus(chol[ci * 3]).max(SIGMA_MIN);
                    let l21 = chol[ci * 3 + 1];
                    let s22 = softplus(chol[ci * 3 + 2]);
                    let s2 = (l21 * l21 + s22 * s22).sqrt().max(SIGMA_MIN);
                    let rho = (l21 / s2).clamp(-RHO_MAX, RHO_MAX);
                    Component {
                        weight: ex[i] / z,
                        mean: [means[ci * 2], means[ci * 2 + 1]],
                        sigma: [s1, s2],
                        rho,
                    }
                })
                .collect();
            pairs.push(PairModel { components: comps });
        }
        let joint = JointHyperModel::new(pairs)?;
        Ok(if self.independent { joint.factorized() } else { joint })
    }

    /// Differentiable per-element joint bits of `(z1, z2)`, both shaped `(h, w, C)`.
    pub fn bits_var(&self, ctx: &Ctx, z1: &Var, z2: &Var) -> Var {
        assert_eq!(z1.shape(), z2.shape());
        let shape = z1.shape().to_vec();
        assert_eq!(*shape.last().unwrap(), self.channels);
        let (c, k) = (self.channels, self.mixtures);
        let n = z1.len();

        let weights = ctx.param(&self.logits).softmax_last().reshape(&[c * k]);
        let means = ctx.param(&self.means).split_last(&[1, 1]);
        let chol = ctx.param(&self.chol).split_last(&[1, 1, 1]);
        let s1 = chol[0].softplus().clamp_min(SIGMA_MIN).reshape(&[c * k]);
        let l21 = chol[1].reshape(&[c * k]);
        let s22 = chol[2].softplus();
        let s2 = l21
            .square()
            .add(&s22.square().reshape(&[c * k]))
            .sqrt()
            .clamp_min(SIGMA_MIN);
        let rho = l21.div(&s2).clamp(-RHO_MAX, RHO_MAX);
        let m1 = means[0].reshape(&[c * k]);
        let m2 = means[1].reshape(&[c * k]);

        let flat1 = z1.reshape(&[n]);
        let flat2 = z2.reshape(&[n]);
        let acc = |slot: &mut Option<Var>, v: Var| {
            *slot = Some(match slot.take() {
                None => v,
                Some(m) => m.add(&v),
            })
        };
        let (mut joint, mut marg1, mut marg2) = (None, None, None);
        for comp in 0..k {
            let idx: Rc<Vec<isize>> = Rc::new((0..n).map(|i| ((i % c) * k + comp) as isize).collect());
            let pick = |v: &Var| v.gather(idx.clone(), &[n]);
            let (s1e, s2e) = (pick(&s1), pick(&s2));
            let d1 = flat1.sub(&pick(&m1));
            let d2 = flat2.sub(&pick(&m2));
            let a1 = d1.add_scalar(-0.5).div(&s1e);
            let b1 = d1.add_scalar(0.5).div(&s1e);
            let a2 = d2.add_scalar(-0.5).div(&s2e);
            let b2 = d2.add_scalar(0.5).div(&s2e);
            let w = pick(&weights);
            if self.independent {
                acc(&mut marg1, interval_mass_var(&a1, &b1).mul(&w));
                acc(&mut marg2, interval_mass_var(&a2, &b2).mul(&w));
            } else {
                acc(&mut joint, rect_mass_var(&a1, &b1, &a2, &b2, &pick(&rho)).mul(&w));
            }
        }
        let bits = if self.independent {
            bits_var(&marg1.unwrap()).add(&bits_var(&marg2.unwrap()))
        } else {
            bits_var(&joint.unwrap())
        };
        bits.reshape(&shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_component() -> PairModel {
        PairModel::new(vec![
            Component {
                weight: 0.3,
                mean: [-1.0, 0.5],
                sigma: [0.8, 1.3],
                rho: 0.6,
            },
            Component {
                weight: 0.7,
                mean: [1.5, -0.5],
                sigma: [1.2, 0.7],
                rho: -0.4,
            },
        ])
        .unwrap()
    }

    #[test]
    fn standard_density_at_origin() {
        assert!((PairModel::standard(0.0).pdf(0.0, 0.0) - 1.0 / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn independent_bin_is_product() {
        let p = PairModel::standard(0.0).bin_pmf(0.0, 0.0);
        assert!((p - 0.382_924_922_548_026f64.powi(2)).abs() < 1e-12);
        assert!((p - 0.146_631).abs() < 1e-6);
    }

    #[test]
    fn eight_pairs_at_origin() {
        let model = JointHyperModel::new(vec![PairModel::standard(0.0); 2]).unwrap();
        let z = Hyperprior(Grid::zeros(2, 2, 2));
        let bits = joint_hyper_entropy_bits(&z, &z, &model).unwrap();
        assert!((bits - 8.0 * -PairModel::standard(0.0).bin_pmf(0.0, 0.0).log2()).abs() < 1e-12);
        assert!((bits - 22.158).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_weights() {
        let mut c = two_component().components;
        c[0].weight = 0.5;
        assert!(PairModel::new(c).is_err());
    }

    #[test]
    fn marginal_of_joint_bins() {
        let m = two_component();
        for t1 in -3..=3 {
            let s: f64 = (-40..=40).map(|t2| m.bin_pmf(t1 as f64, t2 as f64)).sum();
            assert!((s - m.marginal_bin_pmf(0, t1 as f64)).abs() < 1e-9);
        }
    }

    #[test]
    fn closed_form_conditional_mean() {
        let m = PairModel::standard(0.5);
        assert!((m.conditional_mean(0, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(PairModel::standard(0.0).conditional_mean(0, 3.0), 0.0);
    }

    #[test]
    fn mixture_conditional_mean_matches_quadrature() {
        let m = two_component();
        for &x in &[-2.0, -0.3, 0.9, 2.5] {
            // E[z2 | z1 = x] = ∫ z2 p(x, z2) dz2 / ∫ p(x, z2) dz2 by the midpoint rule
            let (mut num, mut den) = (0.0, 0.0);
            let h = 1e-3;
            let mut z2 = -20.0;
            while z2 < 20.0 {
                let p = m.pdf(x, z2 + h / 2.0);
                num += (z2 + h / 2.0) * p;
                den += p;
                z2 += h;
            }
            assert!((m.conditional_mean(0, x) - num / den).abs() < 1e-6);
        }
    }

    #[test]
    fn materialized_model_matches_graph_bits() {
        for independent in [false, true] {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut store = ParamStore::new();
            let gmm = HyperGmm::new(&mut store, "gmm", 3, 2, independent, &mut rng);
            for v in store.get_mut("gmm.chol").unwrap().data.iter_mut().skip(1).step_by(3) {
                *v = 0.8;
            }
            let model = gmm.model(&store).unwrap();
            assert_eq!(model.is_factorized(), independent);
            let z1: Vec<f64> = (0..6).map(|i| i as f64 - 2.0).collect();
            let z2: Vec<f64> = (0..6).map(|i| 1.0 - i as f64 * 0.5).collect();
            let ctx = Ctx::eval(&store);
            let g = gmm
                .bits_var(&ctx, &Var::constant(&[1, 2, 3], z1.clone()), &Var::constant(&[1, 2, 3], z2.clone()))
                .to_vec();
            let h1 = Hyperprior(Grid::new(1, 2, 3, z1).unwrap());
            let h2 = Hyperprior(Grid::new(1, 2, 3, z2).unwrap());
            let direct = joint_hyper_element_bits(&h1, &h2, &model).unwrap();
            for (a, b) in g.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn factorized_model_ignores_the_peer() {
        let joint = JointHyperModel::new(vec![two_component()]).unwrap();
        let ind = joint.clone().factorized();
        let p = two_component();
        let want = p.marginal_bin_pmf(0, 1.0) * p.marginal_bin_pmf(1, -1.0);
        assert!((ind.bin_pmf(0, 1.0, -1.0) - want).abs() < 1e-15);
        assert!((joint.bin_pmf(0, 1.0, -1.0) - want).abs() > 1e-4);
        let own = Hyperprior(Grid::new(1, 1, 1, vec![2.0]).unwrap());
        let est = mmse_peer_estimate(&own, 0, &ind).unwrap();
        assert!((est.0.data[0] - p.marginal_mean(1)).abs() < 1e-15);
    }

    #[test]
    fn joint_bits_gradients_wrt_parameters_and_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let gmm = HyperGmm::new(&mut store, "gmm", 2, 2, false, &mut rng);
        for (i, v) in store.get_mut("gmm.chol").unwrap().data.iter_mut().enumerate() {
            *v += 0.1 * i as f64 - 0.3;
        }
        let names = ["gmm.logits", "gmm.means", "gmm.chol"];
        let mut inputs: Vec<(Vec<usize>, Vec<f64>)> = names
            .iter()
            .map(|n| {
                let p = store.get(n).unwrap();
                (p.shape.clone(), p.data.clone())
            })
            .collect();
        inputs.push((vec![2, 2, 2], (0..8).map(|i| 0.7 * i as f64 - 2.6).collect()));
        inputs.push((vec![2, 2, 2], (0..8).map(|i| 1.9 - 0.45 * i as f64).collect()));
        let gc = gradcheck::check(
            |v| {
                let mut s = ParamStore::new();
                for (n, var) in names.iter().zip(v) {
                    s.insert(n, var.shape(), var.to_vec());
                }
                // rebuild through the store while keeping the caller's leaves
                let ctx = Ctx::eval(&s);
                ctx.seed(names[0], &v[0]);
                ctx.seed(names[1], &v[1]);
                ctx.seed(names[2], &v[2]);
                gmm.bits_var(&ctx, &v[3], &v[4]).sum()
            },
            &inputs,
            100,
            1e-6,
            1e-6,
        );
        assert!(gc.checked >= 30);
        assert!(gc.max_rel_err < 1e-5, "{gc:?}");
    }
}
