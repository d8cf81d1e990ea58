//! Equirectangular saliency maps: Gaussian splatting of fixations, the
//! front-center-bias (FCB) prior and its fusion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::image::pixel_center;
use crate::io::{self, Provenance, RawHeader};
use crate::sphere::{spherical_delta, to_equirect, wrap_deg, SpherePoint};

/// Full width at half maximum of the fixation kernel, in pixels at
/// [`REFERENCE_WIDTH`].
pub const KERNEL_FWHM_PX: f64 = 90.0;
/// Equirectangular width the kernel size refers to (the smallest source
/// resolution of the reference dataset, 4000x2000).
pub const REFERENCE_WIDTH: usize = 4000;
/// Default FCB amplitude relative to a max-normalized fixation map.
pub const DEFAULT_FCB_WEIGHT: f64 = 0.3;
const SIGMA_FLOOR_DEG: f64 = 1.0;

/// Dense row-major map, row 0 at the top (latitude +90).
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl SaliencyMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        SaliencyMap {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::shape(format!(
                "map of {} values cannot be {width}x{height}",
                data.len()
            )));
        }
        Ok(SaliencyMap {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        SaliencyMap {
            width,
            height,
            data,
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

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `(col, row)` of the largest value; the first one in raster order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    /// Sphere position of the argmax pixel center.
    pub fn argmax_point(&self) -> SpherePoint {
        let (c, r) = self.argmax();
        pixel_center(c, r, self.width, self.height)
    }

    /// Divides by the maximum so the peak becomes 1. An all-zero map stays zero.
    pub fn normalized(&self) -> Self {
        let m = self.max();
        if m > 0.0 {
            self.map(|v| v / m)
        } else {
            self.clone()
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        SaliencyMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_dims(&self, other: &SaliencyMap) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::shape(format!(
                "map dimensions differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Column `c` becomes column `W - 1 - c`.
    pub fn mirror_horizontal(&self) -> Self {
        SaliencyMap::from_fn(self.width, self.height, |c, r| self.get(self.width - 1 - c, r))
    }

    pub fn save_raw(&self, path: &Path, prov: &Provenance) -> Result<()> {
        let data: Vec<f32> = self.data.iter().map(|&v| v as f32).collect();
        io::write_raw_f32(
            path,
            &RawHeader {
                width: self.width,
                height: self.height,
                channels: 1,
                provenance: Some(prov.clone()),
            },
            &data,
        )
    }

    pub fn load_raw(path: &Path) -> Result<Self> {
        let (h, data) = io::read_raw_f32(path)?;
        if h.channels != 1 {
            return Err(Error::malformed(path, "saliency maps are single-channel"));
        }
        SaliencyMap::from_data(h.width, h.height, data.into_iter().map(f64::from).collect())
    }

    /// 8-bit grayscale export, linear in `[0, 1]`.
    pub fn save_png(&self, path: &Path, prov: &Provenance) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| io::quantize_unit(v)).collect();
        io::write_png(path, self.width, self.height, 1, &bytes, prov)
    }

    /// RGB heatmap export (jet-like colormap) of the max-normalized map.
    pub fn save_heatmap_png(&self, path: &Path, prov: &Provenance) -> Result<()> {
        let n = self.normalized();
        let mut bytes = Vec::with_capacity(self.data.len() * 3);
        for &v in &n.data {
            bytes.extend_from_slice(&jet(v));
        }
        io::write_png(path, self.width, self.height, 3, &bytes, prov)
    }
}

fn jet(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let ch = |center: f64| io::quantize_unit(1.5 - (4.0 * v - center).abs());
    [ch(3.0), ch(2.0), ch(1.0)]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelMode {
    /// Isotropic Gaussian in the equirectangular plane.
    #[default]
    Planar,
    /// Gaussian of great-circle distance, same width in degrees at the equator.
    Spherical,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub fwhm_px: f64,
    /// When set, the kernel scales with the map width relative to this width.
    pub reference_width: Option<usize>,
    /// Kernel support radius in standard deviations.
    pub truncate_sigmas: f64,
    pub mode: KernelMode,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            fwhm_px: KERNEL_FWHM_PX,
            reference_width: Some(REFERENCE_WIDTH),
            truncate_sigmas: 3.0,
            mode: KernelMode::Planar,
        }
    }
}

impl KernelSpec {
    /// Standard deviation in pixels for a map `width` pixels wide.
    pub fn sigma_px(&self, width: usize) -> f64 {
        let sigma = self.fwhm_px / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
        match self.reference_width {
            Some(r) => sigma * width as f64 / r as f64,
            None => sigma,
        }
    }
}

/// Max-normalized fixation map with the default kernel.
pub fn render_saliency(fixations: &[SpherePoint], width: usize, height: usize) -> SaliencyMap {
    render_saliency_with(fixations, width, height, &KernelSpec::default(), ExecMode::Parallel)
}

/// Splats a Gaussian at every fixation (wrapping across the left/right seam)
/// and max-normalizes. Rows are computed independently and each pixel sums
/// fixations in list order, so both execution modes agree bit for bit.
pub fn render_saliency_with(
    fixations: &[SpherePoint],
    width: usize,
    height: usize,
    kernel: &KernelSpec,
    mode: ExecMode,
) -> SaliencyMap {
    render_unnormalized(fixations, width, height, kernel, mode).normalized()
}

/// Sum of kernels without the final normalization.
pub fn render_unnormalized(
    fixations: &[SpherePoint],
    width: usize,
    height: usize,
    kernel: &KernelSpec,
    mode: ExecMode,
) -> SaliencyMap {
    let mut map = SaliencyMap::zeros(width, height);
    if fixations.is_empty() || width == 0 || height == 0 {
        return map;
    }
    let sigma = kernel.sigma_px(width);
    let amp = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    match kernel.mode {
        KernelMode::Planar => {
            let pts: Vec<(f64, f64)> = fixations
                .iter()
                .map(|p| {
                    let c = to_equirect(*p, width, height);
                    (c.x, c.y)
                })
                .collect();
            let cutoff = kernel.truncate_sigmas * sigma;
            let w = width as f64;
            exec::for_each_chunk_mut(mode, &mut map.data, width, |row, out| {
                let yc = (height - row) as f64 - 0.5;
                for &(xf, yf) in &pts {
                    let dy = yc - yf;
                    if dy.abs() > cutoff {
                        continue;
                    }
                    let mut add = |col: usize| {
                        let xc = col as f64 + 0.5;
                        let dx = (xc - xf + w / 2.0).rem_euclid(w) - w / 2.0;
                        let d2 = dx * dx + dy * dy;
                        if d2 <= cutoff * cutoff {
                            out[col] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
                        }
                    };
                    if 2.0 * cutoff + 2.0 >= w {
                        (0..width).for_each(&mut add);
                    } else {
                        let lo = (xf - cutoff - 0.5).floor() as i64;
                        let hi = (xf + cutoff - 0.5).ceil() as i64;
                        for c in lo..=hi {
                            add(c.rem_euclid(width as i64) as usize);
                        }
                    }
                }
            });
        }
        KernelMode::Spherical => {
            let sigma_rad = (sigma * 360.0 / width as f64).to_radians();
            let cutoff = kernel.truncate_sigmas * sigma_rad;
            exec::for_each_chunk_mut(mode, &mut map.data, width, |row, out| {
                let lat = pixel_center(0, row, width, height).lat;
                for f in fixations {
                    if (lat - f.lat).to_radians().abs() > cutoff {
                        continue;
                    }
                    for (col, o) in out.iter_mut().enumerate() {
                        let d = spherical_delta(pixel_center(col, row, width, height), *f);
                        if d <= cutoff {
                            *o += amp * (-d * d / (2.0 * sigma_rad * sigma_rad)).exp();
                        }
                    }
                }
            });
        }
    }
    map
}

/// Separable Gaussian prior centered at (0, 0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcbParams {
    pub sigma_lon_deg: f64,
    pub sigma_lat_deg: f64,
    pub weight: f64,
}

impl Default for FcbParams {
    fn default() -> Self {
        FcbParams {
            sigma_lon_deg: 40.0,
            sigma_lat_deg: 20.0,
            weight: DEFAULT_FCB_WEIGHT,
        }
    }
}

impl FcbParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_lon_deg > 0.0 && self.sigma_lat_deg > 0.0) {
            return Err(Error::invalid("FCB sigmas must be positive"));
        }
        if !(self.weight >= 0.0) {
            return Err(Error::invalid("FCB weight must be non-negative"));
        }
        Ok(())
    }

    pub fn with_weight(self, weight: f64) -> Self {
        FcbParams { weight, ..self }
    }
}

/// FCB map whose maximum equals `params.weight`.
pub fn build_fcb(width: usize, height: usize, params: &FcbParams) -> Result<SaliencyMap> {
    params.validate()?;
    let (sx, sy) = (params.sigma_lon_deg, params.sigma_lat_deg);
    let raw = SaliencyMap::from_fn(width, height, |c, r| {
        let p = pixel_center(c, r, width, height);
        let lon = wrap_deg(p.lon);
        (-(lon * lon) / (2.0 * sx * sx) - (p.lat * p.lat) / (2.0 * sy * sy)).exp()
    });
    Ok(raw.normalized().map(|v| v * params.weight))
}

/// `Norm(S + C)`: element-wise sum, then max-normalization.
pub fn fuse_fcb(s_tilde: &SaliencyMap, c: &SaliencyMap) -> Result<SaliencyMap> {
    s_tilde.same_dims(c)?;
    let data = s_tilde.data.iter().zip(&c.data).map(|(a, b)| a + b).collect();
    Ok(SaliencyMap {
        width: s_tilde.width,
        height: s_tilde.height,
        data,
    }
    .normalized())
}

/// Moment-matched FCB widths around (0, 0); longitudes are wrapped before
/// squaring. Weight is 1.
pub fn fit_fcb(fixations: &[SpherePoint]) -> Result<FcbParams> {
    if fixations.len() < 10 {
        return Err(Error::invalid(format!(
            "fitting the FCB needs at least 10 fixations, got {}",
            fixations.len()
        )));
    }
    let n = fixations.len() as f64;
    let lon2 = fixations.iter().map(|p| wrap_deg(p.lon).powi(2)).sum::<f64>() / n;
    let lat2 = fixations.iter().map(|p| p.lat.powi(2)).sum::<f64>() / n;
    Ok(FcbParams {
        sigma_lon_deg: lon2.sqrt().max(SIGMA_FLOOR_DEG),
        sigma_lat_deg: lat2.sqrt().max(SIGMA_FLOOR_DEG),
        weight: 1.0,
    })
}
