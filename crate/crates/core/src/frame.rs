//! RGB portrait frames and their lossless file form.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::landmarks::LandmarkImage;

/// Square RGB image, channel-major `[3, size, size]`, values in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct PortraitFrame {
    pub size: usize,
    pub pixels: Vec<f32>,
    pub subject_id: Option<u32>,
    pub frame_id: Option<u32>,
}

impl PortraitFrame {
    pub fn new(size: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != 3 * size * size {
            return Err(Error::Shape(format!(
                "expected {} values for a {size}x{size} RGB frame, got {}",
                3 * size * size,
                pixels.len()
            )));
        }
        Ok(PortraitFrame {
            size,
            pixels,
            subject_id: None,
            frame_id: None,
        })
    }

    pub fn filled(size: usize, value: f32) -> Self {
        PortraitFrame::new(size, vec![value; 3 * size * size]).unwrap()
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.size + y) * self.size + x]
    }

    /// `[1, 3, size, size]`.
    pub fn to_tensor(&self) -> ArrayD<f32> {
        ArrayD::from_shape_vec(IxDyn(&[1, 3, self.size, self.size]), self.pixels.clone()).unwrap()
    }

    pub fn from_tensor(t: &ArrayD<f32>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != 3 || s[2] != s[3] {
            return Err(Error::Shape(format!("expected [1, 3, N, N], got {s:?}")));
        }
        PortraitFrame::new(s[2], t.iter().copied().collect())
    }

    pub fn mse(&self, other: &PortraitFrame) -> Result<f64> {
        if self.size != other.size {
            return Err(Error::Shape(format!("frame sizes {} and {} differ", self.size, other.size)));
        }
        let n = self.pixels.len() as f64;
        Ok(self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
            .sum::<f64>()
            / n)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let s = self.size as u32;
        let img = image::RgbImage::from_fn(s, s, |x, y| {
            let px = |c| {
                let v = self.get(c, y as usize, x as usize).clamp(-1.0, 1.0);
                ((v + 1.0) * 127.5).round() as u8
            };
            image::Rgb([px(0), px(1), px(2)])
        });
        img.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        if w != h {
            return Err(Error::Image {
                path: path.to_path_buf(),
                message: format!("expected a square image, got {w}x{h}"),
            });
        }
        let size = w as usize;
        let mut pixels = vec![0f32; 3 * size * size];
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                pixels[(c * size + y as usize) * size + x as usize] = p.0[c] as f32 / 127.5 - 1.0;
            }
        }
        PortraitFrame::new(size, pixels)
    }
}

impl LandmarkImage {
    /// `[1, 1, size, size]`.
    pub fn to_tensor(&self) -> ArrayD<f32> {
        ArrayD::from_shape_vec(IxDyn(&[1, 1, self.size, self.size]), self.pixels.clone()).unwrap()
    }
}
