//! Channel-last feature grids and the image type built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Var;

/// A real array of shape `(h, w, c)`, row-major, channels fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::Shape(format!(
                "grid {h}x{w}x{c} needs {} values, got {}",
                h * w * c,
                data.len()
            )));
        }
        Ok(Grid { h, w, c, data })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Grid {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, i: usize, j: usize, ch: usize) -> f64 {
        self.data[(i * self.w + j) * self.c + ch]
    }

    pub fn at_mut(&mut self, i: usize, j: usize, ch: usize) -> &mut f64 {
        &mut self.data[(i * self.w + j) * self.c + ch]
    }

    pub fn to_var(&self) -> Var {
        Var::constant(&[self.h, self.w, self.c], self.data.clone())
    }

    pub fn to_leaf(&self) -> Var {
        Var::leaf(&[self.h, self.w, self.c], self.data.clone())
    }

    pub fn from_var(v: &Var) -> Self {
        let s = v.shape();
        assert_eq!(s.len(), 3, "expected a (h, w, c) variable, got {s:?}");
        Grid {
            h: s[0],
            w: s[1],
            c: s[2],
            data: v.to_vec(),
        }
    }

    pub fn same_dims(&self, other: &Grid) -> bool {
        self.dims() == other.dims()
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("{what}: non-finite value at index {i}")));
        }
        Ok(())
    }
}

/// An RGB image with values in `[0, 1]`, stored `(H, W, 3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgbImage(pub Grid);

impl RgbImage {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        Ok(RgbImage(Grid::new(h, w, 3, data)?))
    }

    pub fn height(&self) -> usize {
        self.0.h
    }

    pub fn width(&self) -> usize {
        self.0.w
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    /// Converts to 8-bit RGB, rounding and clamping.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut img = image::RgbImage::new(self.width() as u32, self.height() as u32);
        for (i, px) in img.pixels_mut().enumerate() {
            for ch in 0..3 {
                px.0[ch] = (self.0.data[i * 3 + ch].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        img
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img.pixels().flat_map(|p| p.0.map(|v| v as f64 / 255.0)).collect();
        RgbImage(Grid {
            h: img.height() as usize,
            w: img.width() as usize,
            c: 3,
            data,
        })
    }
}

/// Two same-size views captured by user 1 and user 2.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoPair {
    pub user1: RgbImage,
    pub user2: RgbImage,
}

impl StereoPair {
    pub fn new(user1: RgbImage, user2: RgbImage) -> Result<Self> {
        if !user1.0.same_dims(&user2.0) {
            return Err(Error::Shape(format!(
                "stereo views differ in size: {:?} vs {:?}",
                user1.0.dims(),
                user2.0.dims()
            )));
        }
        Ok(StereoPair { user1, user2 })
    }

    pub fn view(&self, user: usize) -> &RgbImage {
        if user == 0 {
            &self.user1
        } else {
            &self.user2
        }
    }
}
