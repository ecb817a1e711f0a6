use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const CHANNELS: usize = 3;

/// RGB image with values in `[0,1]`, row-major HWC.
///
/// `resolution` is the nominal resolution the content carries: the pixel width
/// for an undegraded image, or the intermediate size after [`degrade`].
///
/// [`degrade`]: super::degrade
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
    pub resolution: usize,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("zero-sized image"));
        }
        if data.len() != width * height * CHANNELS {
            return Err(Error::shape(
                "image",
                format!("{width}x{height}x3 needs {} values, got {}", width * height * CHANNELS, data.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
            resolution: width,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height * CHANNELS],
            resolution: width,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let src = (y * self.width + (self.width - 1 - x)) * CHANNELS;
                let dst = (y * self.width + x) * CHANNELS;
                out.data[dst..dst + CHANNELS].copy_from_slice(&self.data[src..src + CHANNELS]);
            }
        }
        out
    }

    /// Rec. 601 luma: 0.299 R + 0.587 G + 0.114 B.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(CHANNELS)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    /// Channel-planar copy (`C×H×W`), the layout the network consumes.
    pub fn to_chw<T: crate::numerics::Real>(&self) -> Vec<T> {
        let hw = self.width * self.height;
        let mut out = vec![T::zero(); hw * CHANNELS];
        for (i, p) in self.data.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                out[c * hw + i] = T::cast_from(p[c]);
            }
        }
        out
    }

    /// 8-bit quantization used for PNG output: round half up.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        PngEncoder::new(&mut bytes)
            .write_image(
                &self.to_rgb8(),
                self.width as u32,
                self.height as u32,
                ExtendedColorType::Rgb8,
            )
            .map_err(|e| Error::path(path, e))?;
        write_atomic(path, &bytes)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::path(path, e))?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_rgb8(w as usize, h as usize, img.as_raw())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_is_involution() {
        let data: Vec<f64> = (0..4 * 3 * 3).map(|i| i as f64 / 36.0).collect();
        let img = ImageBuffer::new(4, 3, data).unwrap();
        let f = img.flip_horizontal();
        assert_eq!(f.get(0, 1, 2), img.get(3, 1, 2));
        assert_eq!(f.flip_horizontal(), img);
    }

    #[test]
    fn quantization_rounds_half_up() {
        let img = ImageBuffer::new(1, 1, vec![0.5 / 255.0, 1.0, 0.0]).unwrap();
        assert_eq!(img.to_rgb8(), vec![1, 255, 0]);
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..5 * 4 * 3).map(|i| (i as f64 * 0.37).fract()).collect();
        let img = ImageBuffer::new(5, 4, data).unwrap();
        let p = dir.path().join("x.png");
        img.save_png(&p).unwrap();
        let back = ImageBuffer::load_png(&p).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn rejects_zero_size() {
        assert!(ImageBuffer::new(0, 3, vec![]).is_err());
    }
}
