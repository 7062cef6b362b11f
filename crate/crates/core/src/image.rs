//! Floating-point images with interleaved channels, values nominally in [0, 1].

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn filled(width: usize, height: usize, value: &[f32]) -> Self {
        let mut data = Vec::with_capacity(width * height * value.len());
        for _ in 0..width * height {
            data.extend_from_slice(value);
        }
        Self { width, height, channels: value.len(), data }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Image(format!("{} values for a {width}x{height}x{channels} image", data.len())));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, o: &Image) -> Result<()> {
        if (self.width, self.height, self.channels) != (o.width, o.height, o.channels) {
            return Err(Error::Image(format!(
                "shape mismatch: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, o.width, o.height, o.channels
            )));
        }
        Ok(())
    }

    pub fn mse(&self, o: &Image) -> Result<f64> {
        self.same_shape(o)?;
        let s: f64 = self.data.iter().zip(&o.data).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
        Ok(s / self.data.len().max(1) as f64)
    }

    pub fn mean_abs_diff(&self, o: &Image) -> Result<f64> {
        self.same_shape(o)?;
        let s: f64 = self.data.iter().zip(&o.data).map(|(a, b)| (*a as f64 - *b as f64).abs()).sum();
        Ok(s / self.data.len().max(1) as f64)
    }

    pub fn max_abs_diff(&self, o: &Image) -> Result<f64> {
        self.same_shape(o)?;
        Ok(self.data.iter().zip(&o.data).map(|(a, b)| (*a as f64 - *b as f64).abs()).fold(0.0, f64::max))
    }
}

/// Peak signal-to-noise ratio in dB for images in [0, 1]; identical images
/// give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let mse = a.mse(b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}
