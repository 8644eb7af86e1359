//! Flat `key = value` run configuration.
//!
//! A file holds one assignment per line; `#` starts a comment. Command-line
//! overrides use the same `key=value` form and win over the file. Unknown
//! keys and repeated keys in one file are errors. Every key and its default
//! is listed in [`KEYS`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::data::{DatasetSpec, Recipe, Split};
use crate::harness::synth::SynthConfig;
use crate::model::{ModelConfig, Pipeline};
use crate::training::distortion::DistortionKind;
use crate::training::loss::LossWeights;
use crate::training::trainer::TrainConfig;
use crate::transforms::TransformConfig;

/// Every recognised key with its default; an empty default means "unset".
pub const KEYS: &[(&str, &str)] = &[
    ("pipeline", "ntsc"),
    ("model", "micro"),
    ("channels", ""),
    ("blocks", ""),
    ("heads", ""),
    ("window_size", ""),
    ("mlp_ratio", ""),
    ("hyper_channels", ""),
    ("model_seed", "0"),
    ("mixtures", "3"),
    ("independent", "false"),
    ("side_info", "true"),
    ("bandwidths", "8:160:8"),
    ("power", "1"),
    ("eta", "1"),
    ("epochs", "10"),
    ("batch_size", "2"),
    ("lr_init", "1e-4"),
    ("lr_final", "1e-6"),
    ("seed", "0"),
    ("snr_db", "5"),
    ("distortion", "mse"),
    ("beta", ""),
    ("beta1", ""),
    ("beta2", ""),
    ("checkpoint_every", "0"),
    ("clip_norm", "0"),
    ("data", "synth"),
    ("data_root", ""),
    ("recipe", "kitti"),
    ("shuffle_seed", ""),
    ("synth_train", "16"),
    ("synth_val", "4"),
    ("synth_test", "8"),
    ("synth_height", "64"),
    ("synth_width", "128"),
    ("synth_range", "6"),
    ("synth_noise", "0.02"),
    ("synth_seed", "0"),
    ("series", ""),
];

fn default_of(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

/// Explicitly assigned keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigMap(pub BTreeMap<String, String>);

fn split_assignment(line: &str) -> Result<(String, String)> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
    let (k, v) = (k.trim(), v.trim());
    if default_of(k).is_none() {
        return Err(Error::Config(format!("unknown config key {k:?}")));
    }
    Ok((k.to_string(), v.to_string()))
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_assignment(line).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
            if map.insert(k.clone(), v).is_some() {
                return Err(Error::Config(format!("line {}: key {k:?} assigned twice", n + 1)));
            }
        }
        Ok(ConfigMap(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = split_assignment(o)?;
            self.0.insert(k, v);
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> &str {
        self.0
            .get(key)
            .map(String::as_str)
            .or_else(|| default_of(key))
            .expect("key is in the table")
    }

    fn opt(&self, key: &str) -> Option<&str> {
        Some(self.raw(key)).filter(|v| !v.is_empty())
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| Error::Config(format!("cannot parse {key} = {v:?}")))
    }

    fn get_opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.opt(key).map(|_| self.get(key)).transpose()
    }

    fn list4(&self, key: &str) -> Result<Option<[usize; 4]>> {
        let Some(v) = self.opt(key) else { return Ok(None) };
        let items: Vec<usize> = v
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("{key} must be four integers, got {v:?}")))?;
        items
            .try_into()
            .map(Some)
            .map_err(|_| Error::Config(format!("{key} must be four integers, got {v:?}")))
    }

    /// Every key with its resolved textual value.
    pub fn resolved_text(&self) -> String {
        KEYS.iter().map(|(k, _)| format!("{k} = {}\n", self.raw(k))).collect()
    }
}

/// Parses `a,b,c` or `start:end:step`.
pub fn parse_bandwidths(v: &str) -> Result<Vec<usize>> {
    let err = || Error::Config(format!("bandwidths must be a list or start:end:step, got {v:?}"));
    let parts: Vec<&str> = v.split(':').collect();
    if parts.len() == 3 {
        let [a, b, s]: [usize; 3] = parts
            .iter()
            .map(|p| p.trim().parse())
            .collect::<std::result::Result<Vec<usize>, _>>()
            .map_err(|_| err())?
            .try_into()
            .map_err(|_| err())?;
        if s == 0 || a > b {
            return Err(err());
        }
        return Ok((a..=b).step_by(s).collect());
    }
    v.split(',').map(|p| p.trim().parse().map_err(|_| err())).collect()
}

/// Log-spaced distortion weights over two decades, for tracing an RD curve.
pub fn default_beta_grid(kind: DistortionKind, n: usize) -> Vec<f64> {
    let (lo, hi): (f64, f64) = match kind {
        DistortionKind::Mse => (100.0, 10_000.0),
        DistortionKind::MsSsim => (1.0, 100.0),
    };
    if n == 1 {
        return vec![(lo * hi).sqrt()];
    }
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataConfig {
    Synth {
        train: SynthConfig,
        val: SynthConfig,
        test: SynthConfig,
    },
    Dir {
        root: PathBuf,
        recipe: Recipe,
        shuffle_seed: Option<u64>,
    },
}

impl DataConfig {
    pub fn dataset(&self, split: Split) -> Option<DatasetSpec> {
        match self {
            DataConfig::Synth { .. } => None,
            DataConfig::Dir { root, recipe, shuffle_seed } => Some(DatasetSpec {
                root: root.clone(),
                recipe: *recipe,
                split,
                shuffle_seed: *shuffle_seed,
            }),
        }
    }
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Name of the RD series this run contributes to.
    pub series: String,
}

impl RunConfig {
    pub fn resolve(map: &ConfigMap) -> Result<Self> {
        let pipeline: Pipeline = map.get("pipeline")?;
        let mut t = match map.raw("model") {
            "micro" => TransformConfig::micro(),
            "full" => TransformConfig::full(),
            other => return Err(Error::Config(format!("unknown model size {other:?} (expected micro or full)"))),
        };
        if let Some(c) = map.list4("channels")? {
            t.channels_per_stage = c;
        }
        if let Some(b) = map.list4("blocks")? {
            t.blocks_per_stage = b;
        }
        if let Some(h) = map.list4("heads")? {
            t.heads_per_stage = h;
        }
        if let Some(w) = map.get_opt("window_size")? {
            t.window_size = w;
            t.shift_size = w / 2;
        }
        if let Some(m) = map.get_opt("mlp_ratio")? {
            t.mlp_ratio = m;
        }
        if let Some(h) = map.get_opt("hyper_channels")? {
            t.hyper_channels = h;
        }
        t.seed = map.get("model_seed")?;
        let eta: f64 = map.get("eta")?;
        let model = ModelConfig {
            pipeline,
            transform: t,
            mixtures: map.get("mixtures")?,
            independent: map.get("independent")?,
            side_info: map.get("side_info")?,
            bandwidths: parse_bandwidths(map.raw("bandwidths"))?,
            power: map.get("power")?,
            eta,
        };
        model.validate()?;

        let kind: DistortionKind = map.get("distortion")?;
        let beta = match map.get_opt::<f64>("beta")? {
            Some(b) => b,
            None => {
                let grid = default_beta_grid(kind, 3);
                grid[1]
            }
        };
        let weights = LossWeights {
            beta1: map.get_opt("beta1")?.unwrap_or(beta),
            beta2: map.get_opt("beta2")?.unwrap_or(beta),
            eta,
            distortion: kind,
        };
        let mut train = TrainConfig::new(pipeline, weights);
        train.epochs = map.get("epochs")?;
        train.batch_size = map.get("batch_size")?;
        train.lr_init = map.get("lr_init")?;
        train.lr_final = map.get("lr_final")?;
        train.seed = map.get("seed")?;
        train.snr_db = map.get("snr_db")?;
        train.checkpoint_every = map.get("checkpoint_every")?;
        train.clip_norm = map.get("clip_norm")?;
        train.validate()?;

        let data = match map.raw("data") {
            "synth" => {
                let base = SynthConfig {
                    n: 0,
                    height: map.get("synth_height")?,
                    width: map.get("synth_width")?,
                    homography_range: map.get("synth_range")?,
                    noise_level: map.get("synth_noise")?,
                    seed: map.get("synth_seed")?,
                };
                base.validate()?;
                // splits draw from disjoint seeds
                let split = |key: &str, k: u64| -> Result<SynthConfig> {
                    Ok(SynthConfig {
                        n: map.get(key)?,
                        seed: base.seed.wrapping_mul(3).wrapping_add(k),
                        ..base.clone()
                    })
                };
                DataConfig::Synth {
                    train: split("synth_train", 0)?,
                    val: split("synth_val", 1)?,
                    test: split("synth_test", 2)?,
                }
            }
            "dir" => DataConfig::Dir {
                root: map
                    .opt("data_root")
                    .ok_or_else(|| Error::Config("data = dir needs data_root".into()))?
                    .into(),
                recipe: map.get("recipe")?,
                shuffle_seed: map.get_opt("shuffle_seed")?,
            },
            other => return Err(Error::Config(format!("unknown data source {other:?} (expected synth or dir)"))),
        };
        let series = map.opt("series").map_or_else(|| format!("{pipeline}"), str::to_string);
        Ok(RunConfig { model, train, data, series })
    }

    /// Loads an optional file, applies overrides and resolves.
    pub fn from_sources(file: Option<&Path>, overrides: &[String]) -> Result<(ConfigMap, Self)> {
        let mut map = match file {
            Some(p) => ConfigMap::load(p)?,
            None => ConfigMap::default(),
        };
        map.apply(overrides)?;
        let cfg = Self::resolve(&map)?;
        Ok((map, cfg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = RunConfig::resolve(&ConfigMap::default()).unwrap();
        assert_eq!(cfg.model.pipeline, Pipeline::Ntsc);
        assert_eq!(cfg.model.bandwidths.len(), 20);
        assert_eq!(cfg.train.lr_init, 1e-4);
        assert_eq!(cfg.train.weights.beta1, cfg.train.weights.beta2);
        assert!(matches!(cfg.data, DataConfig::Synth { .. }));
    }

    #[test]
    fn file_and_overrides() {
        let mut map = ConfigMap::parse("# run\npipeline = ntscc\nepochs=3  # short\n\nbeta1 = 50\n").unwrap();
        map.apply(&["epochs=4".into(), "channels=8,8,8,16".into()]).unwrap();
        let cfg = RunConfig::resolve(&map).unwrap();
        assert_eq!(cfg.train.epochs, 4);
        assert_eq!(cfg.model.pipeline, Pipeline::Ntscc);
        assert_eq!(cfg.train.pipeline, Pipeline::Ntscc);
        assert_eq!(cfg.train.weights.beta1, 50.0);
        assert_eq!(cfg.model.transform.channels_per_stage[3], 16);
        assert!(map.resolved_text().contains("epochs = 4\n"));
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(ConfigMap::parse("epoch = 3").is_err());
        assert!(ConfigMap::parse("epochs = 3\nepochs = 4").is_err());
        assert!(ConfigMap::parse("epochs").is_err());
        assert!(ConfigMap::default().apply(&["nope=1".into()]).is_err());
        let map = ConfigMap::parse("epochs = many").unwrap();
        assert!(RunConfig::resolve(&map).is_err());
        assert!(RunConfig::resolve(&ConfigMap::parse("data = dir").unwrap()).is_err());
        assert!(RunConfig::resolve(&ConfigMap::parse("beta = -1").unwrap()).is_err());
    }

    #[test]
    fn bandwidth_syntax() {
        assert_eq!(parse_bandwidths("8:32:8").unwrap(), vec![8, 16, 24, 32]);
        assert_eq!(parse_bandwidths("2, 4,6").unwrap(), vec![2, 4, 6]);
        assert!(parse_bandwidths("8:4:2").is_err());
    }

    #[test]
    fn beta_grid_spans_two_decades() {
        let g = default_beta_grid(DistortionKind::Mse, 5);
        assert!((g[4] / g[0] - 100.0).abs() < 1e-9);
        assert!((g[1] / g[0] - g[2] / g[1]).abs() < 1e-12);
    }
}
