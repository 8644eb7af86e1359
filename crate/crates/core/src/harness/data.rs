//! Stereo dataset ingestion and preprocessing.
//!
//! A dataset root holds one directory per split, each with `left/` and
//! `right/` subdirectories whose files are paired by name.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{RgbImage, StereoPair};

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    /// Center crop to 370×740, then resize to 128×256.
    Kitti,
    /// Resize to 128×256 directly.
    Cityscapes,
    /// Resize to the given `(height, width)`.
    Resize(usize, usize),
    /// Use images as stored.
    AsIs,
}

impl std::str::FromStr for Recipe {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kitti" => Ok(Recipe::Kitti),
            "cityscapes" => Ok(Recipe::Cityscapes),
            "as_is" | "none" => Ok(Recipe::AsIs),
            _ => {
                let (h, w) = s
                    .split_once('x')
                    .and_then(|(h, w)| Some((h.parse().ok()?, w.parse().ok()?)))
                    .ok_or_else(|| Error::Config(format!("unknown preprocessing recipe {s:?}")))?;
                Ok(Recipe::Resize(h, w))
            }
        }
    }
}

pub const KITTI_CROP: (u32, u32) = (370, 740);
pub const TARGET_SIZE: (u32, u32) = (128, 256);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn dir_name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub root: PathBuf,
    pub recipe: Recipe,
    pub split: Split,
    /// Shuffles the pair order when set; sorted by name otherwise.
    pub shuffle_seed: Option<u64>,
}

/// A loaded pair and the file name it came from.
#[derive(Debug, Clone)]
pub struct NamedPair {
    pub name: String,
    pub pair: StereoPair,
}

/// Applies a preprocessing recipe to one 8-bit image.
pub fn preprocess(img: &image::RgbImage, recipe: Recipe) -> Result<image::RgbImage> {
    let resize = |img: &image::RgbImage, (h, w): (u32, u32)| imageops::resize(img, w, h, FilterType::Triangle);
    match recipe {
        Recipe::AsIs => Ok(img.clone()),
        Recipe::Cityscapes => Ok(resize(img, TARGET_SIZE)),
        Recipe::Resize(h, w) => Ok(resize(img, (h as u32, w as u32))),
        Recipe::Kitti => {
            let (ch, cw) = KITTI_CROP;
            if img.height() < ch || img.width() < cw {
                return Err(Error::Ingestion(format!(
                    "image {}x{} is smaller than the {ch}x{cw} crop",
                    img.height(),
                    img.width()
                )));
            }
            let x = (img.width() - cw) / 2;
            let y = (img.height() - ch) / 2;
            let crop = imageops::crop_imm(img, x, y, cw, ch).to_image();
            Ok(resize(&crop, TARGET_SIZE))
        }
    }
}

fn image_names(dir: &Path) -> Result<BTreeSet<String>> {
    if !dir.is_dir() {
        return Err(Error::Ingestion(format!("missing directory {}", dir.display())));
    }
    let mut names = BTreeSet::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if path.is_file() && ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            names.insert(path.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    Ok(names)
}

pub fn read_image(path: &Path) -> Result<RgbImage> {
    Ok(RgbImage::from_rgb8(&image::open(path)?.to_rgb8()))
}

pub fn write_image(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    img.to_rgb8().save(path)?;
    Ok(())
}

/// Loads every left/right pair of a split, preprocessed and scaled to `[0, 1]`.
pub fn load_stereo(spec: &DatasetSpec) -> Result<Vec<NamedPair>> {
    let base = spec.root.join(spec.split.dir_name());
    let (ldir, rdir) = (base.join("left"), base.join("right"));
    let left = image_names(&ldir)?;
    let right = image_names(&rdir)?;
    let unmatched: Vec<String> = left
        .symmetric_difference(&right)
        .map(|n| if left.contains(n) { format!("left/{n}") } else { format!("right/{n}") })
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::Ingestion(format!("unmatched files: {}", unmatched.join(", "))));
    }
    if left.is_empty() {
        return Err(Error::EmptyDataset(format!("no images under {}", base.display())));
    }
    let mut out = Vec::with_capacity(left.len());
    for name in left {
        let load = |dir: &Path| -> Result<RgbImage> {
            let img = image::open(dir.join(&name))?.to_rgb8();
            Ok(RgbImage::from_rgb8(&preprocess(&img, spec.recipe)?))
        };
        let pair = StereoPair::new(load(&ldir)?, load(&rdir)?)
            .map_err(|e| Error::Ingestion(format!("{name}: {e}")))?;
        out.push(NamedPair { name, pair });
    }
    if let Some(seed) = spec.shuffle_seed {
        out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(out)
}

/// Writes pairs in the layout [`load_stereo`] reads.
pub fn write_split(root: &Path, split: Split, pairs: &[NamedPair]) -> Result<()> {
    let base = root.join(split.dir_name());
    for p in pairs {
        write_image(&base.join("left").join(&p.name), &p.pair.user1)?;
        write_image(&base.join("right").join(&p.name), &p.pair.user2)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(h: u32, w: u32) -> image::RgbImage {
        image::RgbImage::from_fn(w, h, |x, y| image::Rgb([(x % 256) as u8, (y % 256) as u8, 128]))
    }

    #[test]
    fn recipes_produce_target_size() {
        let kitti = preprocess(&gradient(375, 1242), Recipe::Kitti).unwrap();
        assert_eq!((kitti.height(), kitti.width()), (128, 256));
        let city = preprocess(&gradient(1024, 2048), Recipe::Cityscapes).unwrap();
        assert_eq!((city.height(), city.width()), (128, 256));
        assert!(preprocess(&gradient(300, 700), Recipe::Kitti).is_err());
        assert_eq!("64x128".parse::<Recipe>().unwrap(), Recipe::Resize(64, 128));
    }

    #[test]
    fn kitti_crop_is_centered() {
        // a marker at the exact crop center survives in the middle of the output
        let mut img = image::RgbImage::new(1242, 375);
        for y in 180..195 {
            for x in 613..629 {
                img.put_pixel(x, y, image::Rgb([255, 255, 255]));
            }
        }
        let out = preprocess(&img, Recipe::Kitti).unwrap();
        assert!(out.get_pixel(128, 64).0[0] > 200);
        assert_eq!(out.get_pixel(5, 5).0[0], 0);
    }

    #[test]
    fn loading_pairs_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            root: dir.path().to_path_buf(),
            recipe: Recipe::AsIs,
            split: Split::Train,
            shuffle_seed: None,
        };
        fs::create_dir_all(dir.path().join("train/left")).unwrap();
        fs::create_dir_all(dir.path().join("train/right")).unwrap();
        assert!(matches!(load_stereo(&spec), Err(Error::EmptyDataset(_))));
        for n in ["a.png", "b.png"] {
            gradient(16, 32).save(dir.path().join("train/left").join(n)).unwrap();
            gradient(16, 32).save(dir.path().join("train/right").join(n)).unwrap();
        }
        let pairs = load_stereo(&spec).unwrap();
        assert_eq!(pairs.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(), ["a.png", "b.png"]);
        assert!(pairs[0].pair.user1.data().iter().all(|v| (0.0..=1.0).contains(v)));
        gradient(16, 32).save(dir.path().join("train/left/c.png")).unwrap();
        match load_stereo(&spec) {
            Err(Error::Ingestion(msg)) => assert!(msg.contains("left/c.png")),
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }
}
