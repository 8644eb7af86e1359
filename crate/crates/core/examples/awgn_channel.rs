//! Power-normalized symbols through the AWGN channel at several SNRs.

use dntsc::channel::{awgn_transmit, capacity, ChannelSpec, ChannelVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dntsc::Result<()> {
    let uses = 4096;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let raw: Vec<f64> = (0..2 * uses).map(|_| rng.random_range(-1.0..1.0)).collect();
    let scale = (uses as f64 / raw.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let s = ChannelVector::new(raw.iter().map(|v| v * scale).collect(), vec![uses], 1.0)?;
    println!("transmit power {:.4}", s.mean_power());
    for snr in [0.0, 5.0, 10.0, 20.0] {
        let spec = ChannelSpec::new(snr, 1.0, 7)?;
        let rx = awgn_transmit(&s, &spec, 0, &mut spec.rng(0, 0));
        let noise: f64 = rx.reals.iter().zip(&s.reals).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / uses as f64;
        println!(
            "snr {snr:4.1} dB: capacity {:.3} bit/use, noise power {noise:.4} (expected {:.4})",
            capacity(snr)?,
            spec.noise_variance(0)
        );
    }
    Ok(())
}
