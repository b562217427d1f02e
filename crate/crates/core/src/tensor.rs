//! Image tensors and boolean pixel masks.

use std::fmt;
use std::path::Path;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A height x width x channels float image, row-major with interleaved
/// channels (`values[(r * width + c) * channels + ch]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::dims(height * width * channels, values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> Dims {
        Dims {
            height: self.height,
            width: self.width,
            channels: self.channels,
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// Channel values of the pixel at `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.values[start..start + self.channels]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let start = (row * self.width + col) * self.channels;
        &mut self.values[start..start + self.channels]
    }

    /// Decodes an image file into a tensor with values scaled to `[0, 1]`.
    /// Grayscale images keep one channel, everything else becomes RGB.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::data(path, e.to_string()))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img {
            image::DynamicImage::ImageLuma8(g) => Self::new(
                h,
                w,
                1,
                g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
            ),
            other => Self::new(
                h,
                w,
                3,
                other
                    .to_rgb8()
                    .into_raw()
                    .into_iter()
                    .map(|v| v as f32 / 255.0)
                    .collect(),
            ),
        }
    }

    /// Writes the tensor as an 8-bit PNG, clamping values to `[0, 1]`.
    /// Only 1- and 3-channel tensors are supported.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            1 => GrayImage::from_raw(w, h, bytes)
                .expect("buffer length checked at construction")
                .save(path)?,
            3 => image::RgbImage::from_raw(w, h, bytes)
                .expect("buffer length checked at construction")
                .save(path)?,
            c => {
                return Err(Error::InvalidArgument(format!(
                    "cannot write a {c}-channel image as PNG"
                )))
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Boolean height x width grid, row-major.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl fmt::Debug for PixelMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "PixelMask {}x{} area={}", self.height, self.width, self.area())?;
        if self.height * self.width <= 1024 {
            for r in 0..self.height {
                let row: String = (0..self.width)
                    .map(|c| if self.get(r, c) { '#' } else { '.' })
                    .collect();
                writeln!(f, "{row}")?;
            }
        }
        Ok(())
    }
}

impl Default for PixelMask {
    fn default() -> Self {
        PixelMask::new(0, 0, false)
    }
}

impl PixelMask {
    pub fn new(height: usize, width: usize, fill: bool) -> Self {
        Self {
            height,
            width,
            bits: vec![fill; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::dims(height * width, bits.len()));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn from_pixels<I>(height: usize, width: usize, pixels: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut mask = Self::new(height, width, false);
        for (r, c) in pixels {
            if r >= height || c >= width {
                return Err(Error::InvalidArgument(format!(
                    "pixel ({r},{c}) outside {height}x{width} mask"
                )));
            }
            mask.set(r, c, true);
        }
        Ok(mask)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    /// Number of true pixels.
    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// True pixel coordinates in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }

    pub fn same_dims(&self, other: &PixelMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn and(&self, other: &PixelMask) -> Result<PixelMask> {
        if !self.same_dims(other) {
            return Err(Error::dims(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        Ok(PixelMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        })
    }

    /// Writes the mask as an 8-bit grayscale PNG (0 = occluded, 255 = retained).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(y as usize, x as usize) { 255 } else { 0 }])
        });
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Reads a mask PNG; any nonzero luma counts as retained.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::data(path, e.to_string()))?
            .to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Ok(Self {
            height: h,
            width: w,
            bits: img.into_raw().into_iter().map(|v| v > 0).collect(),
        })
    }
}
