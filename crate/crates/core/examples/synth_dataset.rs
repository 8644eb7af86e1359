//! Generates a small synthetic stereo split and writes it as PNGs.
//!
//! Usage: `cargo run --example synth_dataset -- [out_dir]`

use std::path::PathBuf;

use dntsc::harness::data::{write_split, NamedPair, Split};
use dntsc::harness::synth::{synth_pairs, SynthConfig};

fn main() -> dntsc::Result<()> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "synth_out".into()).into();
    let cfg = SynthConfig { n: 4, ..SynthConfig::default() };
    let pairs = synth_pairs(&cfg)?;
    for (i, p) in pairs.iter().enumerate() {
        let m = p.homography.params();
        println!("pair {i}: translation ({:+.2}, {:+.2}) px, perspective ({:+.1e}, {:+.1e})", m[2], m[5], m[6], m[7]);
    }
    let named: Vec<NamedPair> = pairs
        .into_iter()
        .enumerate()
        .map(|(i, p)| NamedPair { name: format!("{i:05}.png"), pair: p.pair })
        .collect();
    write_split(&out, Split::Train, &named)?;
    println!("wrote {} pairs under {}", named.len(), out.display());
    Ok(())
}
