//! RGB rasters and single-channel luma planes.

use std::fmt;
use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image decode failed: {0}")]
    Decode(String),
    #[error("image encode failed: {0}")]
    Encode(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("buffer length {len} does not match {width}x{height} RGB")]
    Shape { width: u32, height: u32, len: usize },
}

/// Row-major 8-bit RGB image.
#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl fmt::Debug for Raster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Raster")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("digest", &&self.digest()[..12])
            .finish()
    }
}

impl Raster {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, RasterError> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(RasterError::Shape {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..(width as usize * height as usize) {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        if x >= self.width || y >= self.height {
            return;
        }
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Fills the clipped rectangle `[x, x+w) x [y, y+h)`.
    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, rgb: [u8; 3]) {
        let x0 = x.max(0);
        let y0 = y.max(0);
        let x1 = (x + w).min(self.width as i64);
        let y1 = (y + h).min(self.height as i64);
        for yy in y0..y1 {
            for xx in x0..x1 {
                self.put_pixel(xx as u32, yy as u32, rgb);
            }
        }
    }

    /// Draws a rectangle outline of the given stroke width, clipped to the raster.
    pub fn stroke_rect(&mut self, x: i64, y: i64, w: i64, h: i64, stroke: i64, rgb: [u8; 3]) {
        self.fill_rect(x, y, w, stroke, rgb);
        self.fill_rect(x, y + h - stroke, w, stroke, rgb);
        self.fill_rect(x, y, stroke, h, rgb);
        self.fill_rect(x + w - stroke, y, stroke, h, rgb);
    }

    /// Copies `src` with its top-left corner at `(x, y)`, clipped.
    pub fn blit(&mut self, src: &Raster, x: i64, y: i64) {
        for sy in 0..src.height as i64 {
            let ty = y + sy;
            if ty < 0 || ty >= self.height as i64 {
                continue;
            }
            for sx in 0..src.width as i64 {
                let tx = x + sx;
                if tx < 0 || tx >= self.width as i64 {
                    continue;
                }
                self.put_pixel(tx as u32, ty as u32, src.pixel(sx as u32, sy as u32));
            }
        }
    }

    /// Nearest-neighbour resample, used for placing images into layout boxes.
    pub fn resize_nearest(&self, width: u32, height: u32) -> Raster {
        let mut out = Raster::filled(width, height, [0, 0, 0]);
        if self.width == 0 || self.height == 0 {
            return out;
        }
        for y in 0..height {
            let sy = (y as u64 * self.height as u64 / height.max(1) as u64) as u32;
            for x in 0..width {
                let sx = (x as u64 * self.width as u64 / width.max(1) as u64) as u32;
                out.put_pixel(x, y, self.pixel(sx, sy));
            }
        }
        out
    }

    /// Sub-rectangle, clipped to the raster bounds.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Raster {
        let x1 = (x + w).min(self.width);
        let y1 = (y + h).min(self.height);
        let (x0, y0) = (x.min(x1), y.min(y1));
        let mut data = Vec::with_capacity(((x1 - x0) * (y1 - y0) * 3) as usize);
        for yy in y0..y1 {
            let start = (yy as usize * self.width as usize + x0 as usize) * 3;
            let end = (yy as usize * self.width as usize + x1 as usize) * 3;
            data.extend_from_slice(&self.data[start..end]);
        }
        Raster {
            width: x1 - x0,
            height: y1 - y0,
            data,
        }
    }

    /// Stable content hash over dimensions and pixel bytes.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.width.to_le_bytes());
        hasher.update(self.height.to_le_bytes());
        hasher.update(&self.data);
        hex::encode(hasher.finalize())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory(bytes).map_err(|e| RasterError::Decode(e.to_string()))?;
        let rgb = img.to_rgb8();
        let (width, height) = rgb.dimensions();
        Ok(Self {
            width,
            height,
            data: rgb.into_raw(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, RasterError> {
        let bytes = std::fs::read(path).map_err(|source| RasterError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode(&bytes)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, RasterError> {
        let img = RgbImage::from_raw(self.width, self.height, self.data.clone()).ok_or(
            RasterError::Shape {
                width: self.width,
                height: self.height,
                len: self.data.len(),
            },
        )?;
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| RasterError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn to_luma<T: Scalar>(&self) -> LumaPlane<T> {
        let (wr, wg, wb) = (T::lit(0.299), T::lit(0.587), T::lit(0.114));
        let values = self
            .data
            .chunks_exact(3)
            .map(|p| {
                wr * T::lit(p[0] as f64) + wg * T::lit(p[1] as f64) + wb * T::lit(p[2] as f64)
            })
            .collect();
        LumaPlane {
            width: self.width as usize,
            height: self.height as usize,
            values,
        }
    }
}

/// Single-channel image in floating point.
#[derive(Debug, Clone, PartialEq)]
pub struct LumaPlane<T> {
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> LumaPlane<T> {
    pub fn new(width: usize, height: usize, values: Vec<T>) -> Self {
        assert_eq!(values.len(), width * height, "plane shape mismatch");
        Self {
            width,
            height,
            values,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> T {
        self.values[y * self.width + x]
    }

    /// Bilinear resample with pixel-center alignment and edge clamping.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> LumaPlane<T> {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let half = T::lit(0.5);
        let sx = T::lit(self.width as f64) / T::lit(width as f64);
        let sy = T::lit(self.height as f64) / T::lit(height as f64);
        let max_x = T::lit((self.width - 1) as f64);
        let max_y = T::lit((self.height - 1) as f64);
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            let fy = ((T::lit(y as f64) + half) * sy - half).max(T::zero()).min(max_y);
            let y0 = fy.floor().to_usize().unwrap_or(0);
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - T::lit(y0 as f64);
            for x in 0..width {
                let fx = ((T::lit(x as f64) + half) * sx - half).max(T::zero()).min(max_x);
                let x0 = fx.floor().to_usize().unwrap_or(0);
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - T::lit(x0 as f64);
                let top = self.at(x0, y0) * (T::one() - tx) + self.at(x1, y0) * tx;
                let bottom = self.at(x0, y1) * (T::one() - tx) + self.at(x1, y1) * tx;
                values.push(top * (T::one() - ty) + bottom * ty);
            }
        }
        LumaPlane {
            width,
            height,
            values,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_preserves_pixels() {
        let mut r = Raster::filled(4, 3, [10, 20, 30]);
        r.put_pixel(2, 1, [255, 0, 7]);
        let back = Raster::decode(&r.encode_png().unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.digest(), r.digest());
    }

    #[test]
    fn luma_weights() {
        let r = Raster::new(1, 1, vec![100, 50, 200]).unwrap();
        let l = r.to_luma::<f64>();
        assert!((l.values[0] - (29.9 + 29.35 + 22.8)).abs() < 1e-12);
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let p = LumaPlane::new(3, 2, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(p.resize_bilinear(3, 2), p);
        let c = LumaPlane::new(2, 2, vec![7.0f32; 4]).resize_bilinear(5, 3);
        assert!(c.values.iter().all(|v| (*v - 7.0).abs() < 1e-6));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(Raster::new(2, 2, vec![0; 11]).is_err());
    }

    #[test]
    fn crop_clips_to_bounds() {
        let r = Raster::filled(10, 10, [1, 2, 3]);
        let c = r.crop(8, 8, 5, 5);
        assert_eq!((c.width(), c.height()), (2, 2));
    }
}
