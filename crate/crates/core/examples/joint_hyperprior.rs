//! Bits for a pair of correlated hyperprior symbols under the joint mixture,
//! against coding each side with its own marginal.

use dntsc::entropy::{Component, JointHyperModel, PairModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> dntsc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for rho in [0.0, 0.5, 0.9, 0.99] {
        let pm = PairModel::new(vec![Component { weight: 1.0, mean: [0.0, 0.0], sigma: [3.0, 3.0], rho }])?;
        let model = JointHyperModel::new(vec![pm.clone()])?;
        let factorized = model.clone().factorized();
        let (mut joint, mut marginal) = (0.0, 0.0);
        let n = 20_000;
        for _ in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let t1 = (3.0 * a).round();
            let t2 = (3.0 * (rho * a + (1.0 - rho * rho).sqrt() * b)).round();
            joint -= model.bin_pmf(0, t1, t2).log2();
            marginal -= factorized.bin_pmf(0, t1, t2).log2();
        }
        println!(
            "rho {rho:4.2}: joint {:.3} bits/pair, marginals {:.3} bits/pair",
            joint / n as f64,
            marginal / n as f64
        );
    }
    Ok(())
}
