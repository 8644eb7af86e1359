use dntsc::alignment::{warp, Homography};
use dntsc::coding::{decode_latent, encode_latent, IntGrid};
use dntsc::entropy::{latent_bin_pmf, Component, PairModel};
use dntsc::grid::{Grid, RgbImage};
use dntsc::jscc::{power_normalize_var, select_bandwidth, BandwidthSet, RatePlan};
use dntsc::model::{Model, ModelConfig, Pipeline};
use dntsc::nn::Var;
use dntsc::transforms::{GaussianParams, Latent, TransformConfig};
use proptest::prelude::*;

fn component() -> impl Strategy<Value = Component> {
    (-4.0f64..4.0, -4.0f64..4.0, 0.3f64..3.0, 0.3f64..3.0, -0.95f64..0.95).prop_map(|(m1, m2, s1, s2, rho)| Component {
        weight: 1.0,
        mean: [m1, m2],
        sigma: [s1, s2],
        rho,
    })
}

fn pair_model() -> impl Strategy<Value = PairModel> {
    prop::collection::vec((component(), 0.1f64..1.0), 1..4).prop_map(|cs| {
        let total: f64 = cs.iter().map(|(_, w)| w).sum();
        PairModel::new(cs.into_iter().map(|(c, w)| Component { weight: w / total, ..c }).collect()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bin_masses_are_probabilities(pm in pair_model(), a in -3.0f64..3.0, b in -3.0f64..3.0, mu in -50.0f64..50.0, s in 0.05f64..30.0, d in -6.0f64..6.0) {
        // bins holding a point within a few Mahalanobis units of a mode carry representable mass
        let c = pm.components()[0];
        let x = c.mean[0] + c.sigma[0] * a;
        let y = c.mean[1] + c.sigma[1] * (c.rho * a + (1.0 - c.rho * c.rho).sqrt() * b);
        let p = pm.bin_pmf(x.round(), y.round());
        prop_assert!(p > 0.0 && p <= 1.0, "{p}");
        let q = latent_bin_pmf((mu + d * s).round(), mu, s).unwrap();
        prop_assert!(q > 0.0 && q <= 1.0, "{q}");
    }

    #[test]
    fn far_bins_stay_in_range(pm in pair_model(), t1 in -40i32..40, t2 in -40i32..40, mu in -50.0f64..50.0, s in 0.05f64..30.0) {
        let p = pm.bin_pmf(t1 as f64, t2 as f64);
        prop_assert!((0.0..=1.0).contains(&p));
        let q = latent_bin_pmf(t1 as f64, mu, s).unwrap();
        prop_assert!((0.0..=1.0).contains(&q));
    }

    #[test]
    fn joint_marginalizes_to_the_marginal(pm in pair_model(), t1 in -6i32..6) {
        let t1 = t1 as f64;
        let summed: f64 = (-60..=60).map(|t2| pm.bin_pmf(t1, t2 as f64)).sum();
        prop_assert!((summed - pm.marginal_bin_pmf(0, t1)).abs() < 1e-7);
    }

    #[test]
    fn uncorrelated_component_factorizes(c in component(), t1 in -6i32..6, t2 in -6i32..6) {
        let pm = PairModel::new(vec![Component { rho: 0.0, ..c }]).unwrap();
        let (t1, t2) = (t1 as f64, t2 as f64);
        let product = pm.marginal_bin_pmf(0, t1) * pm.marginal_bin_pmf(1, t2);
        prop_assert!((pm.bin_pmf(t1, t2) - product).abs() < 1e-7);
    }

    #[test]
    fn escape_boundary_round_trips(offsets in prop::collection::vec(-70i64..70, 1..40), mu in -3.0f64..3.0, s in 0.1f64..2.0) {
        let n = offsets.len();
        let values: Vec<i64> = offsets.iter().map(|o| mu.round() as i64 + o).collect();
        let p = GaussianParams { mu: Grid::new(1, 1, n, vec![mu; n]).unwrap(), sigma: Grid::new(1, 1, n, vec![s; n]).unwrap() };
        let y = IntGrid::new(1, 1, n, values).unwrap();
        let bytes = encode_latent(&y, &p).unwrap();
        prop_assert_eq!(decode_latent(&bytes, &p).unwrap(), y);
    }

    #[test]
    fn bandwidth_is_monotone_in_bits(a in 0.0f64..200.0, b in 0.0f64..200.0, eta in 0.2f64..3.0) {
        let v = BandwidthSet::multiples_of_eight(20);
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(select_bandwidth(lo, eta, v.values()).unwrap() <= select_bandwidth(hi, eta, v.values()).unwrap());
    }

    #[test]
    fn plans_conserve_channel_uses(bits in prop::collection::vec(0.0f64..300.0, 1..64)) {
        let plan = RatePlan::from_bits(&bits, &bits, 1.0, &BandwidthSet::multiples_of_eight(20)).unwrap();
        prop_assert_eq!(2 * plan.uses(), plan.k_self.iter().sum::<usize>());
        prop_assert_eq!(plan.segments().iter().sum::<usize>(), plan.uses());
    }

    #[test]
    fn power_constraint_is_exact(s in prop::collection::vec(-10.0f64..10.0, 1..64), power in 0.1f64..4.0) {
        let s: Vec<f64> = s.iter().chain(s.iter()).map(|v| v + 1e-3).collect();
        let n = s.len() as f64 / 2.0;
        let out = power_normalize_var(&Var::constant(&[s.len()], s), power).to_vec();
        prop_assert!((out.iter().map(|v| v * v).sum::<f64>() / n - power).abs() < 1e-9);
    }

    #[test]
    fn identity_warp_is_identity(data in prop::collection::vec(-5.0f64..5.0, 24)) {
        let g = Latent(Grid::new(2, 4, 3, data).unwrap());
        prop_assert_eq!(warp(&g, &Homography::identity()).unwrap(), g);
    }
}

proptest! {
    #[test]
    fn translations_compose(a in -2i32..=2, b in -2i32..=2, data in prop::collection::vec(-5.0f64..5.0, 6 * 16)) {
        let g = Latent(Grid::new(6, 16, 1, data).unwrap());
        let (a, b) = (a as f64, b as f64);
        let two = warp(&warp(&g, &Homography::translation(a, 0.0)).unwrap(), &Homography::translation(b, 0.0)).unwrap();
        let one = warp(&g, &Homography::translation(a + b, 0.0)).unwrap();
        // interior columns, away from the zero padding
        for i in 0..6 {
            for j in 4..12 {
                prop_assert!((two.0.at(i, j, 0) - one.0.at(i, j, 0)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn latent_dims_follow_the_downsampling_factor() {
    let model = Model::new(ModelConfig::new(Pipeline::Ntsc, TransformConfig::micro())).unwrap();
    for (h, w) in [(16, 32), (32, 16), (64, 128), (128, 64)] {
        let (y, z) = model.analyze(0, &RgbImage::new(h, w, vec![0.3; h * w * 3]).unwrap()).unwrap();
        assert_eq!((y.0.h, y.0.w), (h / 16, w / 16));
        assert_eq!(z.0.c, TransformConfig::micro().hyper_channels);
    }
}

#[test]
fn seeded_initialization_is_reproducible() {
    let build = |seed| {
        let mut t = TransformConfig::micro();
        t.seed = seed;
        Model::new(ModelConfig::new(Pipeline::Ntscc, t)).unwrap().store
    };
    assert_eq!(build(3), build(3));
    assert_ne!(build(3), build(4));
}

#[test]
fn untileable_sizes_are_errors() {
    let model = Model::new(ModelConfig::new(Pipeline::Ntsc, TransformConfig::micro())).unwrap();
    for (h, w) in [(48, 64), (16, 24), (0, 16)] {
        assert!(model.analyze(0, &RgbImage::new(h, w, vec![0.3; h * w * 3]).unwrap()).is_err());
    }
}
