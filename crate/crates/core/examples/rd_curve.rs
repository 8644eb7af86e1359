//! Evaluates two untrained rate points and renders their RD curve as SVG.
//!
//! Usage: `cargo run --example rd_curve -- [out_dir]`

use std::path::PathBuf;

use dntsc::harness::eval::{evaluate, write_csv, EvalOptions};
use dntsc::harness::plot::{plot_to_file, CurvePoint, PlotSpec};
use dntsc::harness::synth::{synth_pairs, SynthConfig};
use dntsc::model::{Model, ModelConfig, Pipeline};
use dntsc::transforms::TransformConfig;

fn main() -> dntsc::Result<()> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "rd_out".into()).into();
    let cfg = SynthConfig { n: 2, height: 32, width: 64, ..SynthConfig::default() };
    let pairs: Vec<_> = synth_pairs(&cfg)?.into_iter().map(|p| p.pair).collect();
    let mut rows = Vec::new();
    for seed in [0, 1] {
        let mut t = TransformConfig::micro();
        t.seed = seed;
        let model = Model::new(ModelConfig::new(Pipeline::Ntsc, t))?;
        let opts = EvalOptions { series: "micro".into(), label: format!("seed{seed}"), seed: 0, snr_db: 5.0 };
        rows.extend(evaluate(&model, &pairs, &opts)?);
    }
    for r in rows.iter().filter(|r| r.user == "avg") {
        println!("{}: {:.4} bpp, {:.2} dB", r.label, r.rate, r.psnr_db);
    }
    write_csv(&out.join("rd.csv"), &rows)?;
    let points: Vec<CurvePoint> = rows.iter().map(CurvePoint::from).collect();
    plot_to_file(&points, &PlotSpec::default(), &out.join("rd.svg"))?;
    println!("wrote {}", out.display());
    Ok(())
}
