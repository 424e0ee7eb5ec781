//! Image and label-map containers plus PNG round-tripping.
//!
//! Images are stored planar (channel-major), values in `[0, 1]`. Label maps
//! hold one class id per pixel; [`IGNORE_INDEX`] marks pixels excluded from
//! losses and metrics.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Sentinel class id for pixels that carry no supervision.
pub const IGNORE_INDEX: u8 = 255;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(
            channels > 0 && height > 0 && width > 0,
            InvalidInput,
            "image dimensions must be positive, got {channels}x{height}x{width}"
        );
        ensure!(
            data.len() == channels * height * width,
            InvalidInput,
            "image buffer has {} values, expected {}",
            data.len(),
            channels * height * width
        );
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Mean of every channel.
    pub fn channel_means(&self) -> Vec<f64> {
        (0..self.channels)
            .map(|c| {
                let p = self.plane(c);
                p.iter().map(|&v| v as f64).sum::<f64>() / p.len() as f64
            })
            .collect()
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Loads an 8-bit PNG (or any format the `image` crate decodes with the
    /// enabled features) as RGB, or as a single channel when `grayscale`.
    pub fn load_png(path: &Path, grayscale: bool) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::ImageRead {
            id: stem(path),
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if grayscale {
            let g = img.to_luma8();
            let (w, h) = g.dimensions();
            let data = g.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
            Self::new(1, h as usize, w as usize, data)
        } else {
            let rgb = img.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let mut data = vec![0.0f32; 3 * h * w];
            for (x, y, p) in rgb.enumerate_pixels() {
                for c in 0..3 {
                    data[(c * h + y as usize) * w + x as usize] = p.0[c] as f32 / 255.0;
                }
            }
            Self::new(3, h, w, data)
        }
    }

    /// Writes the image as an 8-bit PNG (RGB for three channels, gray for one).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = (self.height, self.width);
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let result = match self.channels {
            1 => GrayImage::from_fn(w as u32, h as u32, |x, y| {
                Luma([q(self.get(0, y as usize, x as usize))])
            })
            .save(path),
            3 => RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let (x, y) = (x as usize, y as usize);
                Rgb([q(self.get(0, y, x)), q(self.get(1, y, x)), q(self.get(2, y, x))])
            })
            .save(path),
            c => {
                return Err(Error::InvalidInput(format!(
                    "cannot encode a {c}-channel image as PNG"
                )))
            }
        };
        result.map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        ensure!(
            height > 0 && width > 0,
            InvalidInput,
            "label map dimensions must be positive, got {height}x{width}"
        );
        ensure!(
            data.len() == height * width,
            InvalidInput,
            "label buffer has {} values, expected {}",
            data.len(),
            height * width
        );
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Sorted distinct values present in the map.
    pub fn distinct_values(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (0..=255u8).filter(|&v| seen[v as usize]).collect()
    }

    pub fn count(&self, class: u8) -> usize {
        self.data.iter().filter(|&&v| v == class).count()
    }

    pub fn is_all_ignored(&self) -> bool {
        self.data.iter().all(|&v| v == IGNORE_INDEX)
    }

    /// Loads a single-channel 8-bit integer mask.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::ImageRead {
            id: stem(path),
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let g = img.to_luma8();
        let (w, h) = g.dimensions();
        Self::new(h as usize, w as usize, g.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("label buffer sized at construction");
        buf.save(path)
            .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }
}

pub(crate) fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
