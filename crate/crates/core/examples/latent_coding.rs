//! Range-codes a quantized latent under per-element Gaussians and compares
//! the stream length with the ideal code length.

use dntsc::coding::symbols::latent_table_bits;
use dntsc::coding::{decode_latent, encode_latent, IntGrid};
use dntsc::entropy::latent_rate_bits;
use dntsc::grid::Grid;
use dntsc::transforms::{GaussianParams, Latent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> dntsc::Result<()> {
    let (h, w, c) = (8, 16, 32);
    let n = h * w * c;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mu: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
    let sigma: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..6.0)).collect();
    let values: Vec<i64> = mu
        .iter()
        .zip(&sigma)
        .map(|(&m, &s)| Normal::new(m, s).unwrap().sample(&mut rng).round() as i64)
        .collect();
    let params = GaussianParams { mu: Grid::new(h, w, c, mu)?, sigma: Grid::new(h, w, c, sigma)? };
    let y = IntGrid::new(h, w, c, values)?;

    let bytes = encode_latent(&y, &params)?;
    assert_eq!(decode_latent(&bytes, &params)?, y);

    let ideal = latent_rate_bits(&Latent(y.to_grid()), &params)?.total_bits;
    let table = latent_table_bits(&y, &params)?;
    println!("{n} symbols");
    println!("continuous model  {ideal:10.1} bits");
    println!("quantized tables  {table:10.1} bits");
    println!("range coder       {:10} bits", 8 * bytes.len());
    Ok(())
}
