//! The `dntsc` command line.
//!
//! Every command resolves the flat configuration (file plus `--set`
//! overrides) and writes a `manifest.json` next to its outputs recording the
//! resolved configuration, seeds, inputs and outputs. Manifests carry no
//! timestamps, so identical invocations produce identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::channel::ChannelSpec;
use crate::checkpoint;
use crate::coding::Bitstream;
use crate::error::{Error, Result};
use crate::grid::StereoPair;
use crate::harness::config::{ConfigMap, DataConfig, RunConfig};
use crate::harness::data::{load_stereo, read_image, write_image, write_split, NamedPair, Split};
use crate::harness::eval::{evaluate_sweep, to_csv, SweepPoint};
use crate::harness::plot::{plot_to_file, read_curves, Metric, PlotSpec};
use crate::harness::synth::synth_pairs;
use crate::model::Model;
use crate::training::trainer::{resume_from, train, OutputDir};

#[derive(Debug, Parser)]
#[command(name = "dntsc", version, about = "Distributed neural coding of correlated image pairs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides one key, e.g. `--set epochs=5`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<(ConfigMap, RunConfig)> {
        RunConfig::from_sources(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic correlated stereo dataset on disk.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes the metric log and checkpoints.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Encode one user's image into a bitstream.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        /// 1 or 2.
        #[arg(long)]
        user: usize,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Store the hyperprior coding tables in the stream.
        #[arg(long)]
        embed_tables: bool,
    },
    /// Jointly decode the two users' bitstreams.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        stream1: PathBuf,
        #[arg(long)]
        stream2: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Transmit a pair over the simulated channel.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate checkpoints on the test split and write an RD table.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `label=path`; repeatable, one per rate point.
        #[arg(long = "checkpoint", value_name = "LABEL=PATH", required = true)]
        checkpoints: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw RD curves from one or more CSV tables.
    Plot {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "psnr")]
        metric: Metric,
        #[arg(long, default_value = "avg")]
        user: String,
        #[arg(long, default_value = "Rate-distortion")]
        title: String,
        #[arg(long, default_value = "rate")]
        x_label: String,
    },
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: Option<BTreeMap<String, String>>,
    resolved: Option<&'a RunConfig>,
    seeds: BTreeMap<&'a str, u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    extra: serde_json::Value,
}

fn seeds(run: &RunConfig) -> BTreeMap<&'static str, u64> {
    let mut s = BTreeMap::from([("seed", run.train.seed), ("model_seed", run.model.transform.seed)]);
    match &run.data {
        DataConfig::Synth { train, val, test } => {
            s.insert("synth_train_seed", train.seed);
            s.insert("synth_val_seed", val.seed);
            s.insert("synth_test_seed", test.seed);
        }
        DataConfig::Dir { shuffle_seed: Some(k), .. } => {
            s.insert("shuffle_seed", *k);
        }
        DataConfig::Dir { .. } => {}
    }
    s
}

fn text_map(map: &ConfigMap) -> BTreeMap<String, String> {
    map.resolved_text()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: Option<(&ConfigMap, &RunConfig)>,
    inputs: &[&Path],
    outputs: &[PathBuf],
    extra: serde_json::Value,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg.map(|(m, _)| text_map(m)),
        resolved: cfg.map(|(_, r)| r),
        seeds: cfg.map(|(_, r)| seeds(r)).unwrap_or_default(),
        inputs: inputs.iter().map(|p| display(p)).collect(),
        outputs: outputs.iter().map(|p| display(p)).collect(),
        extra,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(path)
}

/// Pairs of one split, generated or read from disk.
pub fn load_split(run: &RunConfig, split: Split) -> Result<Vec<StereoPair>> {
    match &run.data {
        DataConfig::Synth { train, val, test } => {
            let cfg = match split {
                Split::Train => train,
                Split::Val => val,
                Split::Test => test,
            };
            Ok(synth_pairs(cfg)?.into_iter().map(|p| p.pair).collect())
        }
        DataConfig::Dir { .. } => {
            let spec = run.data.dataset(split).expect("directory data");
            Ok(load_stereo(&spec)?.into_iter().map(|p| p.pair).collect())
        }
    }
}

fn parent_dir(p: &Path) -> PathBuf {
    p.parent().filter(|d| !d.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn cmd_synth(cfg: &ConfigArgs, out: &Path) -> Result<()> {
    let (map, run) = cfg.resolve()?;
    let DataConfig::Synth { train, val, test } = &run.data else {
        return Err(Error::Config("synth needs data = synth".into()));
    };
    let mut homographies = BTreeMap::new();
    for (split, sc) in [(Split::Train, train), (Split::Val, val), (Split::Test, test)] {
        let pairs = synth_pairs(sc)?;
        let named: Vec<NamedPair> = pairs
            .iter()
            .enumerate()
            .map(|(i, p)| NamedPair {
                name: format!("{i:05}.png"),
                pair: p.pair.clone(),
            })
            .collect();
        write_split(out, split, &named)?;
        let hs: BTreeMap<String, [f64; 8]> = named
            .iter()
            .zip(&pairs)
            .map(|(n, p)| (n.name.clone(), p.homography.params()))
            .collect();
        homographies.insert(split.dir_name(), hs);
    }
    let hpath = out.join("homographies.json");
    fs::write(&hpath, serde_json::to_string_pretty(&homographies)? + "\n")?;
    write_manifest(out, "synth", Some((&map, &run)), &[], &[hpath], serde_json::Value::Null)?;
    Ok(())
}

fn cmd_train(cfg: &ConfigArgs, out: &Path, resume: Option<&Path>) -> Result<()> {
    let (map, run) = cfg.resolve()?;
    let train_set = load_split(&run, Split::Train)?;
    let val_set = load_split(&run, Split::Val).or_else(|e| match e {
        Error::EmptyDataset(_) => Ok(Vec::new()),
        other => Err(other),
    })?;
    let (mut model, state) = match resume {
        Some(p) => {
            let (model, state, adam) = resume_from(p)?;
            if model.cfg != run.model {
                return Err(Error::Config("checkpoint model differs from the configured model".into()));
            }
            (model, Some((state, adam)))
        }
        None => (Model::new(run.model.clone())?, None),
    };
    let dir = OutputDir(out.to_path_buf());
    let report = train(&run.train, &mut model, &train_set, &val_set, Some(&dir), state)?;
    let params = out.join("params.csv");
    let table: String = std::iter::once("module,parameters\n".to_string())
        .chain(model.param_counts().iter().map(|(m, n)| format!("{m},{n}\n")))
        .collect();
    fs::write(&params, table)?;
    let inputs: Vec<&Path> = resume.into_iter().collect();
    let last = report.rows.last().map(|r| r.loss).unwrap_or(f64::NAN);
    write_manifest(
        out,
        "train",
        Some((&map, &run)),
        &inputs,
        &[dir.log(), dir.last(), params],
        serde_json::json!({"epochs_run": report.rows.len(), "final_loss": last}),
    )?;
    Ok(())
}

fn cmd_encode(checkpoint_path: &Path, user: usize, input: &Path, output: &Path, embed: bool) -> Result<()> {
    if !(1..=2).contains(&user) {
        return Err(Error::Input(format!("user must be 1 or 2, got {user}")));
    }
    let model = checkpoint::load(checkpoint_path)?.model;
    let img = read_image(input)?;
    let enc = model.encode(user - 1, &img, embed)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(output, enc.bitstream.to_bytes()?)?;
    let extra = serde_json::json!({
        "user": user,
        "bytes": enc.bitstream.len_bytes(),
        "latent_bits": enc.latent_bits,
        "embedded_tables": embed,
    });
    write_manifest(&parent_dir(output), "encode", None, &[checkpoint_path, input], &[output.to_path_buf()], extra)?;
    Ok(())
}

fn cmd_decode(checkpoint_path: &Path, s1: &Path, s2: &Path, out: &Path) -> Result<()> {
    let model = checkpoint::load(checkpoint_path)?.model;
    let b1 = Bitstream::from_bytes(&fs::read(s1)?)?;
    let b2 = Bitstream::from_bytes(&fs::read(s2)?)?;
    let recon = model.decode_pair(&b1, &b2)?;
    let outs = [out.join("user1.png"), out.join("user2.png")];
    for (p, img) in outs.iter().zip(&recon) {
        write_image(p, img)?;
    }
    write_manifest(out, "decode", None, &[checkpoint_path, s1, s2], &outs, serde_json::Value::Null)?;
    Ok(())
}

fn cmd_simulate(cfg: &ConfigArgs, checkpoint_path: &Path, left: &Path, right: &Path, out: &Path) -> Result<()> {
    let (map, run) = cfg.resolve()?;
    let model = checkpoint::load(checkpoint_path)?.model;
    let pair = StereoPair::new(read_image(left)?, read_image(right)?)?;
    let spec = ChannelSpec::new(run.train.snr_db, model.cfg.power, run.train.seed)?;
    let label = left.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let sim = model.simulate(&pair, &spec, 0, &label)?;
    let outs = [out.join("user1.png"), out.join("user2.png")];
    for (p, img) in outs.iter().zip(&sim.recon) {
        write_image(p, img)?;
    }
    let extra = serde_json::json!({"transmissions": sim.manifests, "joint_hyper_bits": sim.joint_hyper_bits});
    write_manifest(out, "simulate", Some((&map, &run)), &[checkpoint_path, left, right], &outs, extra)?;
    Ok(())
}

fn parse_sweep(items: &[String]) -> Result<Vec<SweepPoint>> {
    items
        .iter()
        .map(|s| {
            let (label, path) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected LABEL=PATH, got {s:?}")))?;
            Ok(SweepPoint {
                label: label.to_string(),
                checkpoint: PathBuf::from(path),
            })
        })
        .collect()
}

fn cmd_eval(cfg: &ConfigArgs, checkpoints: &[String], out: &Path) -> Result<()> {
    let (map, run) = cfg.resolve()?;
    let sweep = parse_sweep(checkpoints)?;
    let test = load_split(&run, Split::Test)?;
    let outcome = evaluate_sweep(&sweep, &test, &run.series, run.train.seed, run.train.snr_db);
    let dir = parent_dir(out);
    fs::create_dir_all(&dir)?;
    fs::write(out, to_csv(&outcome.points)?)?;
    let json = out.with_extension("json");
    fs::write(&json, serde_json::to_string_pretty(&outcome.points)? + "\n")?;
    let failures: BTreeMap<&str, String> = outcome.failures.iter().map(|(l, e)| (l.as_str(), e.to_string())).collect();
    let inputs: Vec<&Path> = sweep.iter().map(|p| p.checkpoint.as_path()).collect();
    write_manifest(
        &dir,
        "eval",
        Some((&map, &run)),
        &inputs,
        &[out.to_path_buf(), json],
        serde_json::json!({"failures": failures}),
    )?;
    if !outcome.failures.is_empty() {
        let msg: Vec<String> = failures.iter().map(|(l, e)| format!("{l}: {e}")).collect();
        return Err(Error::Input(format!("{} sweep point(s) failed: {}", msg.len(), msg.join("; "))));
    }
    Ok(())
}

fn cmd_plot(inputs: &[PathBuf], out: &Path, spec: PlotSpec) -> Result<()> {
    let mut points = Vec::new();
    for p in inputs {
        points.extend(read_curves(p)?);
    }
    plot_to_file(&points, &spec, out)?;
    let ins: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    write_manifest(&parent_dir(out), "plot", None, &ins, &[out.to_path_buf()], serde_json::Value::Null)?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { cfg, out } => cmd_synth(&cfg, &out),
        Command::Train { cfg, out, resume } => cmd_train(&cfg, &out, resume.as_deref()),
        Command::Encode {
            checkpoint,
            user,
            input,
            output,
            embed_tables,
        } => cmd_encode(&checkpoint, user, &input, &output, embed_tables),
        Command::Decode {
            checkpoint,
            stream1,
            stream2,
            out,
        } => cmd_decode(&checkpoint, &stream1, &stream2, &out),
        Command::Simulate {
            cfg,
            checkpoint,
            left,
            right,
            out,
        } => cmd_simulate(&cfg, &checkpoint, &left, &right, &out),
        Command::Eval { cfg, checkpoints, out } => cmd_eval(&cfg, &checkpoints, &out),
        Command::Plot {
            inputs,
            out,
            metric,
            user,
            title,
            x_label,
        } => cmd_plot(
            &inputs,
            &out,
            PlotSpec {
                title,
                x_label,
                metric,
                user,
                ..PlotSpec::default()
            },
        ),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Input(e.to_string()))?;
    run(cli)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> Result<()> {
        run_from(std::iter::once("dntsc").chain(args.iter().copied()))
    }

    #[test]
    fn cli_parses_every_subcommand() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let names: Vec<String> = Cli::command().get_subcommands().map(|c| c.get_name().to_string()).collect();
        assert_eq!(names, ["synth", "train", "encode", "decode", "simulate", "eval", "plot"]);
    }

    #[test]
    fn synth_then_encode_decode() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let data = d.join("data");
        let small = ["--set", "synth_train=1", "--set", "synth_val=0", "--set", "synth_test=1"];
        let size = ["--set", "synth_height=32", "--set", "synth_width=32"];
        let mut args = vec!["synth", "--out", data.to_str().unwrap()];
        args.extend(small);
        args.extend(size);
        run_args(&args).unwrap();
        assert!(data.join("train/left/00000.png").exists());
        assert!(data.join("homographies.json").exists());

        let ck = d.join("model.dntx");
        let model = Model::new(RunConfig::resolve(&ConfigMap::default()).unwrap().model).unwrap();
        checkpoint::save(&ck, &model, None, None).unwrap();
        for (u, side) in [("1", "left"), ("2", "right")] {
            let input = data.join(format!("test/{side}/00000.png"));
            let output = d.join(format!("s{u}.dntc"));
            run_args(&["encode", "--checkpoint", ck.to_str().unwrap(), "--user", u, "--input", input.to_str().unwrap(), "--output", output.to_str().unwrap()]).unwrap();
        }
        let out = d.join("dec");
        run_args(&[
            "decode",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--stream1",
            d.join("s1.dntc").to_str().unwrap(),
            "--stream2",
            d.join("s2.dntc").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .unwrap();
        assert!(out.join("user2.png").exists());
        assert!(out.join("manifest.json").exists());
        assert!(run_args(&["encode", "--checkpoint", ck.to_str().unwrap(), "--user", "3", "--input", "x", "--output", "y"]).is_err());
    }
}
