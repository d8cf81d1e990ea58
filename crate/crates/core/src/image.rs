//! Equirectangular images and viewport patches.
//!
//! Pixels are `f32` in `[0, 1]`, stored planar (channel-major) and row-major
//! with row 0 at the top (latitude +90).

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{self, Provenance, RawHeader};
use crate::sphere::{Interpolation, SpherePoint};

#[derive(Clone, Debug, PartialEq)]
pub struct EquirectImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl EquirectImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape(format!(
                "image data has {} values, expected {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(EquirectImage {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn uniform(width: usize, height: usize, value: f32) -> Self {
        EquirectImage {
            width,
            height,
            channels: 1,
            data: vec![value; width * height],
        }
    }

    /// Grayscale image from a function of the pixel center `(lat, lon)`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(SpherePoint) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(pixel_center(col, row, width, height)));
            }
        }
        EquirectImage {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, col: usize, row: usize, ch: usize) -> f32 {
        self.data[(ch * self.height + row) * self.width + col]
    }

    /// Samples every channel at a sphere point into `out`. Longitude wraps
    /// across the seam; rows clamp at the poles.
    pub fn sample(&self, p: SpherePoint, interp: Interpolation, out: &mut [f32]) {
        let (w, h) = (self.width as f64, self.height as f64);
        // continuous raster coordinates, origin at the top-left corner
        let xr = (p.lon / 360.0 + 0.5) * w;
        let yr = (0.5 - p.lat / 180.0) * h;
        match interp {
            Interpolation::Nearest => {
                let col = (xr.floor() as i64).rem_euclid(self.width as i64) as usize;
                let row = (yr.floor().max(0.0) as usize).min(self.height - 1);
                for (ch, o) in out.iter_mut().enumerate() {
                    *o = self.get(col, row, ch);
                }
            }
            Interpolation::Bilinear => {
                let fx = xr - 0.5;
                let fy = yr - 0.5;
                let x0 = fx.floor();
                let y0 = fy.floor();
                let (tx, ty) = (fx - x0, fy - y0);
                let c0 = (x0 as i64).rem_euclid(self.width as i64) as usize;
                let c1 = (c0 + 1) % self.width;
                let r0 = (y0.max(0.0) as usize).min(self.height - 1);
                let r1 = ((y0 + 1.0).max(0.0) as usize).min(self.height - 1);
                for (ch, o) in out.iter_mut().enumerate() {
                    let a = self.get(c0, r0, ch) as f64;
                    let b = self.get(c1, r0, ch) as f64;
                    let c = self.get(c0, r1, ch) as f64;
                    let d = self.get(c1, r1, ch) as f64;
                    let top = a + (b - a) * tx;
                    let bottom = c + (d - c) * tx;
                    *o = (top + (bottom - top) * ty) as f32;
                }
            }
        }
    }

    /// Rolls the image east by `cols` pixels (content at column `c` moves to
    /// `c + cols`).
    pub fn roll_columns(&self, cols: i64) -> Self {
        let w = self.width as i64;
        let mut data = vec![0f32; self.data.len()];
        for ch in 0..self.channels {
            for row in 0..self.height {
                let base = (ch * self.height + row) * self.width;
                for col in 0..self.width {
                    let dst = (col as i64 + cols).rem_euclid(w) as usize;
                    data[base + dst] = self.data[base + col];
                }
            }
        }
        EquirectImage {
            data,
            ..self.clone()
        }
    }

    /// Luma average of all channels.
    pub fn to_gray(&self) -> Self {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.width * self.height;
        let data = (0..n)
            .map(|i| {
                (0..self.channels).map(|c| self.data[c * n + i]).sum::<f32>()
                    / self.channels as f32
            })
            .collect();
        EquirectImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Loads an 8-bit PNG. With `rgb` false the image is converted to
    /// single-channel luma.
    pub fn load_png(path: &Path, rgb: bool) -> Result<Self> {
        let img = ::image::open(path).map_err(|e| Error::malformed(path, e.to_string()))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if rgb {
            let buf = img.to_rgb8();
            let mut data = vec![0f32; w * h * 3];
            for (i, px) in buf.pixels().enumerate() {
                for c in 0..3 {
                    data[c * w * h + i] = px.0[c] as f32 / 255.0;
                }
            }
            EquirectImage::new(w, h, 3, data)
        } else {
            let buf = img.to_luma8();
            let data = buf.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
            EquirectImage::new(w, h, 1, data)
        }
    }

    pub fn save_png(&self, path: &Path, prov: &Provenance) -> Result<()> {
        let n = self.width * self.height;
        let mut bytes = vec![0u8; n * self.channels];
        for i in 0..n {
            for c in 0..self.channels {
                bytes[i * self.channels + c] = io::quantize_unit(self.data[c * n + i] as f64);
            }
        }
        io::write_png(path, self.width, self.height, self.channels, &bytes, prov)
    }

    pub fn load_raw(path: &Path) -> Result<Self> {
        let (h, data) = io::read_raw_f32(path)?;
        EquirectImage::new(h.width, h.height, h.channels, data)
    }

    pub fn save_raw(&self, path: &Path, prov: &Provenance) -> Result<()> {
        io::write_raw_f32(
            path,
            &RawHeader {
                width: self.width,
                height: self.height,
                channels: self.channels,
                provenance: Some(prov.clone()),
            },
            &self.data,
        )
    }

    /// Loads by extension: `.png` or `.f32` (with sidecar).
    pub fn load(path: &Path, rgb: bool) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("png") => EquirectImage::load_png(path, rgb),
            Some("f32") => {
                let img = EquirectImage::load_raw(path)?;
                Ok(if rgb { img } else { img.to_gray() })
            }
            _ => Err(Error::malformed(path, "expected a .png or .f32 image")),
        }
    }
}

/// Sphere coordinates of the center of raster cell `(col, row)`.
pub fn pixel_center(col: usize, row: usize, width: usize, height: usize) -> SpherePoint {
    SpherePoint {
        lat: 90.0 - (row as f64 + 0.5) * 180.0 / height as f64,
        lon: (col as f64 + 0.5) * 360.0 / width as f64 - 180.0,
    }
}

/// A viewport observation, planar channel-major like [`EquirectImage`].
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePatch {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImagePatch {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape("patch data does not match its dimensions"));
        }
        Ok(ImagePatch {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn get(&self, col: usize, row: usize, ch: usize) -> f32 {
        self.data[(ch * self.height + row) * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// `(col, row)` of the brightest pixel in channel 0; first wins on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let plane = &self.data[..self.width * self.height];
        let mut best = 0;
        for (i, v) in plane.iter().enumerate() {
            if *v > plane[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{extract_viewport, ViewportSpec};

    #[test]
    fn pixel_center_convention() {
        let c = pixel_center(0, 0, 360, 180);
        assert_eq!((c.lat, c.lon), (89.5, -179.5));
        let c = pixel_center(359, 179, 360, 180);
        assert_eq!((c.lat, c.lon), (-89.5, 179.5));
    }

    #[test]
    fn bilinear_hits_pixel_centers_exactly() {
        let img = EquirectImage::from_fn(8, 4, |p| ((p.lat + 90.0) / 180.0 * (p.lon + 180.0) / 360.0) as f32);
        let mut out = [0f32];
        for row in 0..4 {
            for col in 0..8 {
                img.sample(pixel_center(col, row, 8, 4), Interpolation::Bilinear, &mut out);
                assert!((out[0] - img.get(col, row, 0)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn roll_moves_content_east() {
        let img = EquirectImage::from_fn(8, 2, |p| (p.lon + 180.0) as f32 / 360.0);
        let r = img.roll_columns(3);
        assert_eq!(r.get(3, 0, 0), img.get(0, 0, 0));
        assert_eq!(r.get(1, 1, 0), img.get(6, 1, 0));
    }

    #[test]
    fn uniform_image_gives_uniform_patch() {
        let img = EquirectImage::uniform(64, 32, 0.4);
        for center in [SpherePoint::new(0.0, 0.0), SpherePoint::new(80.0, 170.0), SpherePoint::new(-60.0, -120.0)] {
            let patch = extract_viewport(&img, center, &ViewportSpec::square(90.0, 16)).unwrap();
            assert!(patch.data.iter().all(|&v| (v - 0.4).abs() < 1e-6));
        }
    }

    #[test]
    fn png_roundtrip_is_quantized_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = EquirectImage::from_fn(16, 8, |p| ((p.lon + 180.0) / 360.0) as f32);
        img.save_png(&path, &Provenance::default()).unwrap();
        let back = EquirectImage::load_png(&path, false).unwrap();
        assert_eq!((back.width(), back.height(), back.channels()), (16, 8, 1));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
