//! RGB float images and PNG conversion.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(format!(
                "{}x{} RGB image needs {} values, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn is_finite_unit(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    /// Box-filter downsampling by an integer factor; trailing rows/columns that
    /// do not fill a whole block are dropped.
    pub fn downsample(&self, factor: usize) -> Self {
        if factor <= 1 {
            return self.clone();
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let mut out = Image::filled(w, h, [0.0; 3]);
        let norm = 1.0 / (factor * factor) as f32;
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f32; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let p = self.get(x * factor + dx, y * factor + dy);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                    }
                }
                out.set(x, y, acc.map(|v| v * norm));
            }
        }
        out
    }

    /// 8-bit quantization, `round(255 * clamp(v, 0, 1))`.
    pub fn to_rgb8(&self) -> RgbImage {
        let bytes = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer size matches")
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut buf, ImageFormat::Png)
            .expect("png encoding into memory");
        buf.into_inner()
    }

    /// Decodes an 8-bit PNG; RGBA pixels are composited over `background`.
    pub fn decode_png(bytes: &[u8], background: [f32; 3]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| Error::domain(format!("png decode: {e}")))?;
        let rgba = img.to_rgba8();
        let (w, h) = (rgba.width() as usize, rgba.height() as usize);
        let mut data = Vec::with_capacity(w * h * 3);
        for px in rgba.pixels() {
            let a = px[3] as f32 / 255.0;
            for c in 0..3 {
                data.push(px[c] as f32 / 255.0 * a + background[c] * (1.0 - a));
            }
        }
        Image::from_data(w, h, data)
    }

    pub fn load_png(path: &Path, background: [f32; 3]) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_png(&bytes, background).map_err(|e| Error::load(path, e.to_string()))
    }

    /// Writes a PNG atomically (temporary file, then rename).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        crate::dataio::write_atomic(path, &self.encode_png())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_box_filter() {
        let mut img = Image::filled(4, 2, [0.0; 3]);
        img.set(0, 0, [1.0, 0.0, 0.0]);
        img.set(1, 1, [0.0, 1.0, 0.0]);
        let half = img.downsample(2);
        assert_eq!((half.width(), half.height()), (2, 1));
        assert_eq!(half.get(0, 0), [0.25, 0.25, 0.0]);
        assert_eq!(half.get(1, 0), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn png_round_trip_quantized() {
        let mut img = Image::filled(3, 2, [0.5, 0.1, 0.9]);
        img.set(2, 1, [1.0, 0.0, 0.25]);
        let back = Image::decode_png(&img.encode_png(), [1.0; 3]).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn transparent_pixel_takes_background() {
        let mut rgba = image::RgbaImage::new(1, 1);
        rgba.put_pixel(0, 0, image::Rgba([10, 20, 30, 0]));
        let mut buf = Cursor::new(Vec::new());
        rgba.write_to(&mut buf, ImageFormat::Png).unwrap();
        let img = Image::decode_png(&buf.into_inner(), [1.0, 1.0, 1.0]).unwrap();
        assert_eq!(img.get(0, 0), [1.0, 1.0, 1.0]);
    }
}
