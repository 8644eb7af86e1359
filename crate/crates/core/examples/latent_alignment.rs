//! Warps a downsampled side view onto the main view with the ground-truth
//! homography and reports how much closer the two latents become away from
//! the border, where the warp samples outside the side view.

use dntsc::alignment::warp;
use dntsc::harness::synth::{box_downsample, latent_homography, synth_pair, SynthConfig};
use dntsc::grid::Grid;
use dntsc::transforms::Latent;

fn interior_mse(a: &Grid, b: &Grid, border: usize) -> f64 {
    let mut s = 0.0;
    let mut n = 0;
    for i in border..a.h - border {
        for j in border..a.w - border {
            for c in 0..a.c {
                s += (a.at(i, j, c) - b.at(i, j, c)).powi(2);
                n += 1;
            }
        }
    }
    s / n as f64
}

fn main() -> dntsc::Result<()> {
    let cfg = SynthConfig { height: 128, width: 256, homography_range: 16.0, ..SynthConfig::default() };
    let factor = 8;
    for i in 0..4 {
        let sp = synth_pair(&cfg, i)?;
        let main = box_downsample(sp.pair.user1.grid(), factor)?;
        let side = box_downsample(sp.pair.user2.grid(), factor)?;
        let aligned = warp(&Latent(side.clone()), &latent_homography(&sp.homography, factor)?)?;
        println!(
            "pair {i}: mse unaligned {:.5}, aligned {:.5}",
            interior_mse(&main, &side, 3),
            interior_mse(&main, &aligned.0, 3)
        );
    }
    Ok(())
}
