//! Angular and geodesic math for equirectangular panoramas.
//!
//! Public angles are in degrees. A panorama's center column looks along the
//! vehicle heading; column 0 is the seam behind the vehicle. Row 0 is the
//! zenith and row `H` the nadir.
//!
//! 3-vectors use a camera-local frame: `x` to the right of the heading, `y`
//! forward along the heading, `z` up.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius (IUGG), meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Coordinates closer than this (degrees, per axis) are treated as coincident.
pub const DEGENERATE_EPS_DEG: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("camera and property coincide; bearing is undefined")]
    DegenerateGeometry,
    #[error("latitude {0} outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("longitude {0} is not finite")]
    InvalidLongitude(f64),
    #[error("direction ({azimuth_deg}, {pitch_deg}) outside azimuth [-180, 180] / pitch [-90, 90]")]
    InvalidDirection { azimuth_deg: f64, pitch_deg: f64 },
    #[error("panorama dimensions {width}x{height} are not a 2:1 full sphere")]
    InvalidDims { width: u32, height: u32 },
    #[error("pixel coordinate {value} outside [0, {limit}]")]
    OutOfBounds { value: f64, limit: f64 },
}

/// Wraps an angle into `[-180, 180)`.
pub fn wrap_degrees(angle: f64) -> f64 {
    let mut r = (angle + 180.0).rem_euclid(360.0);
    if r >= 360.0 {
        r = 0.0;
    }
    r - 180.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoordinate {
    lat: f64,
    lon: f64,
}

impl GeoCoordinate {
    /// Builds a coordinate, normalizing longitude into `[-180, 180)`.
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::InvalidLatitude(lat));
        }
        if !lon.is_finite() {
            return Err(GeoError::InvalidLongitude(lon));
        }
        Ok(Self {
            lat,
            lon: wrap_degrees(lon),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Great-circle (haversine) distance in meters on a spherical Earth.
    pub fn distance_m(&self, other: &GeoCoordinate) -> f64 {
        let (lat1, lat2) = (self.lat.to_radians(), other.lat.to_radians());
        let dlat = lat2 - lat1;
        let dlon = (other.lon - self.lon).to_radians();
        let a = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
    }

    /// Point reached by travelling `distance_m` along the great circle that
    /// leaves this point at `bearing_deg` (clockwise from North).
    pub fn destination(&self, bearing_deg: f64, distance_m: f64) -> GeoCoordinate {
        let delta = distance_m / EARTH_RADIUS_M;
        let theta = bearing_deg.to_radians();
        let lat1 = self.lat.to_radians();
        let lon1 = self.lon.to_radians();
        let lat2 = (lat1.sin() * delta.cos() + lat1.cos() * delta.sin() * theta.cos()).asin();
        let lon2 = lon1
            + (theta.sin() * delta.sin() * lat1.cos()).atan2(delta.cos() - lat1.sin() * lat2.sin());
        GeoCoordinate {
            lat: lat2.to_degrees(),
            lon: wrap_degrees(lon2.to_degrees()),
        }
    }
}

/// A direction seen from the camera, relative to the vehicle heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalDirection {
    azimuth_deg: f64,
    pitch_deg: f64,
}

impl SphericalDirection {
    pub fn new(azimuth_deg: f64, pitch_deg: f64) -> Result<Self, GeoError> {
        if !(-180.0..=180.0).contains(&azimuth_deg) || !(-90.0..=90.0).contains(&pitch_deg) {
            return Err(GeoError::InvalidDirection {
                azimuth_deg,
                pitch_deg,
            });
        }
        Ok(Self {
            azimuth_deg,
            pitch_deg,
        })
    }

    pub fn azimuth_deg(&self) -> f64 {
        self.azimuth_deg
    }

    pub fn pitch_deg(&self) -> f64 {
        self.pitch_deg
    }
}

/// Dimensions of an equirectangular image covering the full sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawDims", into = "RawDims")]
pub struct PanoDims {
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
struct RawDims {
    width: u32,
    height: u32,
}

impl TryFrom<RawDims> for PanoDims {
    type Error = GeoError;

    fn try_from(raw: RawDims) -> Result<Self, Self::Error> {
        PanoDims::new(raw.width, raw.height)
    }
}

impl From<PanoDims> for RawDims {
    fn from(d: PanoDims) -> Self {
        RawDims {
            width: d.width,
            height: d.height,
        }
    }
}

impl PanoDims {
    pub fn new(width: u32, height: u32) -> Result<Self, GeoError> {
        if height == 0 || u64::from(width) != 2 * u64::from(height) {
            return Err(GeoError::InvalidDims { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Same sphere at `factor` times the resolution.
    pub fn scaled(&self, factor: u32) -> Result<Self, GeoError> {
        let width = self.width.checked_mul(factor).unwrap_or(0);
        let height = self.height.checked_mul(factor).unwrap_or(0);
        PanoDims::new(width, height)
    }
}

/// Real-valued pixel position; integer values address pixel indices.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
}

impl PixelCoord {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(&self, other: &Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn normalized(&self) -> Vec3 {
        self.scale(1.0 / self.norm())
    }
}

/// Bearing from `camera` to `property`, degrees clockwise from North in
/// `[-180, 180)`.
pub fn bearing_angle(camera: &GeoCoordinate, property: &GeoCoordinate) -> Result<f64, GeoError> {
    if (camera.lat - property.lat).abs() < DEGENERATE_EPS_DEG
        && wrap_degrees(camera.lon - property.lon).abs() < DEGENERATE_EPS_DEG
    {
        return Err(GeoError::DegenerateGeometry);
    }
    let lat_c = camera.lat.to_radians();
    let lat_p = property.lat.to_radians();
    let dlon = (property.lon - camera.lon).to_radians();
    let x = dlon.sin() * lat_p.cos();
    let y = lat_c.cos() * lat_p.sin() - lat_c.sin() * lat_p.cos() * dlon.cos();
    Ok(wrap_degrees(x.atan2(y).to_degrees()))
}

/// Azimuth of a bearing relative to the vehicle heading, in `[-180, 180)`.
pub fn azimuth_from_heading(bearing_deg: f64, yaw_deg: f64) -> f64 {
    wrap_degrees(bearing_deg - yaw_deg)
}

/// Column of an azimuth, wrapped into `[0, W)`.
pub fn azimuth_to_column(azimuth_deg: f64, dims: PanoDims) -> f64 {
    let w = f64::from(dims.width);
    let half = w / 2.0;
    let x = half + (azimuth_deg / 180.0) * half;
    let wrapped = x.rem_euclid(w);
    if wrapped >= w {
        0.0
    } else {
        wrapped
    }
}

/// Azimuth of a column in `[0, W)`.
pub fn column_to_azimuth(x: f64, dims: PanoDims) -> Result<f64, GeoError> {
    let w = f64::from(dims.width);
    if !(0.0..w).contains(&x) {
        return Err(GeoError::OutOfBounds { value: x, limit: w });
    }
    let half = w / 2.0;
    Ok((x - half) / half * 180.0)
}

/// Pitch of a row in `[0, H]`.
pub fn row_to_pitch(y: f64, dims: PanoDims) -> Result<f64, GeoError> {
    let h = f64::from(dims.height);
    if !(0.0..=h).contains(&y) {
        return Err(GeoError::OutOfBounds { value: y, limit: h });
    }
    Ok((h / 2.0 - y) * (180.0 / h))
}

/// Inverse of [`row_to_pitch`].
pub fn pitch_to_row(pitch_deg: f64, dims: PanoDims) -> f64 {
    let h = f64::from(dims.height);
    h / 2.0 - pitch_deg * h / 180.0
}

/// Elevation of a point seen at `pitch_deg` and radial distance `depth_m`
/// from a camera at `camera_elev_m`.
pub fn elevation_from_depth(depth_m: f64, pitch_deg: f64, camera_elev_m: f64) -> Result<f64, InvalidDepth> {
    if !depth_m.is_finite() || depth_m <= 0.0 {
        return Err(InvalidDepth(depth_m));
    }
    Ok(camera_elev_m + depth_m * pitch_deg.to_radians().sin())
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("invalid depth {0}")]
pub struct InvalidDepth(pub f64);

/// Unit ray in the camera frame for a direction.
pub fn ray_direction(dir: SphericalDirection) -> Vec3 {
    let az = dir.azimuth_deg.to_radians();
    let pitch = dir.pitch_deg.to_radians();
    let (sin_p, cos_p) = pitch.sin_cos();
    let (sin_a, cos_a) = az.sin_cos();
    Vec3::new(cos_p * sin_a, cos_p * cos_a, sin_p)
}

/// Ray through a pixel of an image with dimensions `dims`.
pub fn pixel_ray(pixel: PixelCoord, dims: PanoDims) -> Result<Vec3, GeoError> {
    let az = column_to_azimuth(pixel.x, dims)?;
    let pitch = row_to_pitch(pixel.y, dims)?;
    Ok(ray_direction(SphericalDirection::new(az, pitch)?))
}
