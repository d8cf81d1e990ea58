//! Spherical coordinates, great-circle distances and the two projections used
//! throughout: the equirectangular plane mapping and gnomonic viewports.
//!
//! Latitude is pitch and longitude is yaw, both in degrees. Equirectangular
//! pixel coordinates put the origin at the lower-left corner of the image, so
//! `y` grows towards the north pole. Raster storage (see [`crate::image`]) is
//! row-major with row 0 at the top.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{EquirectImage, ImagePatch};

/// A head orientation on the unit sphere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpherePoint {
    /// Degrees in `[-90, 90]`.
    pub lat: f64,
    /// Degrees in `[-180, 180)`.
    pub lon: f64,
}

impl SpherePoint {
    pub const ORIGIN: SpherePoint = SpherePoint { lat: 0.0, lon: 0.0 };

    /// Builds a point and canonicalizes it.
    pub fn new(lat: f64, lon: f64) -> Self {
        SpherePoint { lat, lon }.canonical()
    }

    /// Wraps longitude into `[-180, 180)`. Latitudes beyond a pole are
    /// reflected back over it, which moves the longitude by 180 degrees.
    pub fn canonical(self) -> Self {
        let mut lat = self.lat;
        let mut lon = self.lon;
        if !lat.is_finite() || !lon.is_finite() {
            return SpherePoint { lat, lon };
        }
        lat = wrap_deg(lat);
        if lat > 90.0 {
            lat = 180.0 - lat;
            lon += 180.0;
        } else if lat < -90.0 {
            lat = -180.0 - lat;
            lon += 180.0;
        }
        SpherePoint {
            lat: lat.clamp(-90.0, 90.0),
            lon: wrap_deg(lon),
        }
    }

    pub fn is_canonical(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..180.0).contains(&self.lon)
    }

    /// Unit vector with x towards (0,0), y towards (0,90), z towards the north pole.
    pub fn to_unit(self) -> [f64; 3] {
        let (phi, lam) = (self.lat.to_radians(), self.lon.to_radians());
        [phi.cos() * lam.cos(), phi.cos() * lam.sin(), phi.sin()]
    }

    pub fn from_unit(v: [f64; 3]) -> Self {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let z = (v[2] / n).clamp(-1.0, 1.0);
        SpherePoint::new(z.asin().to_degrees(), v[1].atan2(v[0]).to_degrees())
    }

    /// Moves along the great circle leaving `self` with the given direction
    /// for `arc_deg` degrees. Direction 0 points east (+lon) and 90 points
    /// north (+lat).
    pub fn step_towards(self, direction_deg: f64, arc_deg: f64) -> Self {
        let phi1 = self.lat.to_radians();
        let lam1 = self.lon.to_radians();
        // navigation bearing: clockwise from north
        let bearing = (90.0 - direction_deg).to_radians();
        let delta = arc_deg.to_radians();
        let sin_phi2 = phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * bearing.cos();
        let phi2 = sin_phi2.clamp(-1.0, 1.0).asin();
        let y = bearing.sin() * delta.sin() * phi1.cos();
        let x = delta.cos() - phi1.sin() * sin_phi2;
        let lam2 = lam1 + y.atan2(x);
        SpherePoint::new(phi2.to_degrees(), lam2.to_degrees())
    }

    /// Shifts longitude by `delta` degrees.
    pub fn rotate_lon(self, delta: f64) -> Self {
        SpherePoint::new(self.lat, self.lon + delta)
    }
}

/// Wraps an angle in degrees into `[-180, 180)`.
pub fn wrap_deg(deg: f64) -> f64 {
    let w = (deg + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// Haversine central angle between two canonical points, in radians.
pub fn spherical_delta(a: SpherePoint, b: SpherePoint) -> f64 {
    let (pa, pb) = (a.lat.to_radians(), b.lat.to_radians());
    let dpsi = pb - pa;
    let dtheta = (b.lon - a.lon).to_radians();
    let h = (dpsi / 2.0).sin().powi(2) + pa.cos() * pb.cos() * (dtheta / 2.0).sin().powi(2);
    2.0 * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Central angle in degrees.
pub fn angular_distance_deg(a: SpherePoint, b: SpherePoint) -> f64 {
    spherical_delta(a, b).to_degrees()
}

/// Great-circle distance on a sphere of radius `r`.
pub fn orthodromic_distance(a: SpherePoint, b: SpherePoint, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::invalid(format!("sphere radius must be positive, got {r}")));
    }
    Ok(r * spherical_delta(a, b))
}

/// Continuous equirectangular pixel position with the origin at the
/// lower-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
}

impl PixelCoord {
    /// Integer raster cell `(col, row)` holding this position; row 0 is the
    /// top edge. Positions on the right/top border fall in the last cell.
    pub fn to_raster(self, width: usize, height: usize) -> (usize, usize) {
        let col = (self.x.floor().max(0.0) as usize).min(width - 1);
        let up = (self.y.floor().max(0.0) as usize).min(height - 1);
        (col, height - 1 - up)
    }

    /// Center of raster cell `(col, row)`.
    pub fn from_raster(col: usize, row: usize, height: usize) -> Self {
        PixelCoord {
            x: col as f64 + 0.5,
            y: (height - row) as f64 - 0.5,
        }
    }
}

pub fn to_equirect(p: SpherePoint, width: usize, height: usize) -> PixelCoord {
    PixelCoord {
        x: (p.lon / 360.0 + 0.5) * width as f64,
        y: (p.lat / 180.0 + 0.5) * height as f64,
    }
}

pub fn from_equirect(px: PixelCoord, width: usize, height: usize) -> Result<SpherePoint> {
    let (w, h) = (width as f64, height as f64);
    if width == 0 || height == 0 {
        return Err(Error::invalid("image dimensions must be positive"));
    }
    if !(0.0..=w).contains(&px.x) || !(0.0..=h).contains(&px.y) {
        return Err(Error::invalid(format!(
            "pixel ({}, {}) outside {width}x{height}",
            px.x, px.y
        )));
    }
    // x == W is the seam itself; keep the raw value so the mapping stays affine
    Ok(SpherePoint {
        lat: (px.y / h - 0.5) * 180.0,
        lon: (px.x / w - 0.5) * 360.0,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

/// Field of view and output resolution of an extracted viewport.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewportSpec {
    pub fov_h_deg: f64,
    pub fov_v_deg: f64,
    pub out_w: usize,
    pub out_h: usize,
    #[serde(default)]
    pub interpolation: Interpolation,
}

impl Default for ViewportSpec {
    fn default() -> Self {
        ViewportSpec {
            fov_h_deg: 90.0,
            fov_v_deg: 90.0,
            out_w: 84,
            out_h: 84,
            interpolation: Interpolation::Bilinear,
        }
    }
}

impl ViewportSpec {
    pub fn square(fov_deg: f64, size: usize) -> Self {
        ViewportSpec {
            fov_h_deg: fov_deg,
            fov_v_deg: fov_deg,
            out_w: size,
            out_h: size,
            interpolation: Interpolation::Bilinear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok_fov = |f: f64| f > 0.0 && f < 180.0;
        if !ok_fov(self.fov_h_deg) || !ok_fov(self.fov_v_deg) {
            return Err(Error::invalid(format!(
                "viewport fov must lie in (0, 180), got {}x{}",
                self.fov_h_deg, self.fov_v_deg
            )));
        }
        if self.out_w == 0 || self.out_h == 0 {
            return Err(Error::invalid("viewport output size must be at least 1x1"));
        }
        Ok(())
    }
}

/// Sphere point seen through output pixel `(u, v)` of a gnomonic viewport
/// centered at `center`. Row `v = 0` is the top of the viewport.
pub fn viewport_ray(center: SpherePoint, spec: &ViewportSpec, u: usize, v: usize) -> SpherePoint {
    let basis = ViewBasis::new(center);
    let (tx, ty) = (
        (spec.fov_h_deg.to_radians() / 2.0).tan(),
        (spec.fov_v_deg.to_radians() / 2.0).tan(),
    );
    basis.ray(
        (2.0 * (u as f64 + 0.5) / spec.out_w as f64 - 1.0) * tx,
        (1.0 - 2.0 * (v as f64 + 0.5) / spec.out_h as f64) * ty,
    )
}

struct ViewBasis {
    forward: [f64; 3],
    east: [f64; 3],
    up: [f64; 3],
}

impl ViewBasis {
    fn new(center: SpherePoint) -> Self {
        let (phi, lam) = (center.lat.to_radians(), center.lon.to_radians());
        let (sp, cp, sl, cl) = (phi.sin(), phi.cos(), lam.sin(), lam.cos());
        ViewBasis {
            forward: [cp * cl, cp * sl, sp],
            east: [-sl, cl, 0.0],
            up: [-sp * cl, -sp * sl, cp],
        }
    }

    fn ray(&self, x: f64, y: f64) -> SpherePoint {
        let d = [
            self.forward[0] + x * self.east[0] + y * self.up[0],
            self.forward[1] + x * self.east[1] + y * self.up[1],
            self.forward[2] + x * self.east[2] + y * self.up[2],
        ];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        SpherePoint {
            lat: (d[2] / n).clamp(-1.0, 1.0).asin().to_degrees(),
            lon: d[1].atan2(d[0]).to_degrees(),
        }
    }
}

/// Rectilinear (gnomonic) viewport centered at `center`, resampled to
/// `spec.out_w x spec.out_h`.
pub fn extract_viewport(
    image: &EquirectImage,
    center: SpherePoint,
    spec: &ViewportSpec,
) -> Result<ImagePatch> {
    spec.validate()?;
    if image.is_empty() {
        return Err(Error::invalid("cannot extract a viewport from an empty image"));
    }
    let basis = ViewBasis::new(center.canonical());
    let (tx, ty) = (
        (spec.fov_h_deg.to_radians() / 2.0).tan(),
        (spec.fov_v_deg.to_radians() / 2.0).tan(),
    );
    let c = image.channels();
    let mut data = vec![0f32; spec.out_w * spec.out_h * c];
    let mut px = vec![0f32; c];
    for v in 0..spec.out_h {
        let y = (1.0 - 2.0 * (v as f64 + 0.5) / spec.out_h as f64) * ty;
        for u in 0..spec.out_w {
            let x = (2.0 * (u as f64 + 0.5) / spec.out_w as f64 - 1.0) * tx;
            let p = basis.ray(x, y);
            image.sample(p, spec.interpolation, &mut px);
            for (ch, val) in px.iter().enumerate() {
                data[(ch * spec.out_h + v) * spec.out_w + u] = *val;
            }
        }
    }
    ImagePatch::new(spec.out_w, spec.out_h, c, data)
}
