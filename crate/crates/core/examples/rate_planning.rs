//! Maps token code lengths to channel bandwidths and computes the
//! resulting transmission rate.

use dntsc::channel::capacity;
use dntsc::jscc::{select_bandwidth, transmission_rate, BandwidthSet};

fn main() -> dntsc::Result<()> {
    let set = BandwidthSet::multiples_of_eight(20);
    for bits in [3.0, 37.0, 100.0, 250.0] {
        println!("{bits:6.1} bits -> {:3} symbols", select_bandwidth(bits, 1.0, set.values())?);
    }
    let (h, w) = (128, 256);
    let tokens = (h / 16) * (w / 16);
    let uses: usize = (0..tokens).map(|i| select_bandwidth(10.0 + (i % 7) as f64, 1.0, set.values()).unwrap()).sum();
    let cap = capacity(5.0)?;
    println!("{tokens} tokens, {uses} channel uses, capacity {cap:.4}");
    println!("r = {:.5}", transmission_rate(uses, 2000.0, cap, h, w, 3)?);
    Ok(())
}
