//! Depth grids: the plane-based Base64 payload, the raw `LFEDEPTH` file format
//! and nearest-neighbor sampling for panorama pixels.
//!
//! Grid cell `(row, col)` holds the radial distance along the ray of pixel
//! coordinate `(col, row)` of the grid itself (see [`crate::geocore`]).
//! `NaN` is the only "no measurement" marker.

use base64::alphabet;
use base64::engine::general_purpose::{GeneralPurpose, GeneralPurposeConfig};
use base64::engine::DecodePaddingMode;
use base64::Engine;
use thiserror::Error;

use crate::geocore::{pixel_ray, PanoDims, PixelCoord, Vec3};

pub const RAW_MAGIC: &[u8; 8] = b"LFEDEPTH";
const PAYLOAD_HEADER_SIZE: u8 = 8;

#[derive(Debug, Error)]
pub enum DepthError {
    #[error("payload is not valid URL-safe Base64: {0}")]
    MalformedBase64(String),
    #[error("payload has {actual} bytes, header implies {expected}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("bad payload header: {0}")]
    BadHeader(String),
    #[error("pixel {pixel} references plane {index} but only {count} planes exist")]
    PlaneIndexOutOfRange { pixel: usize, index: u8, count: usize },
    #[error("raw depth file does not start with LFEDEPTH")]
    BadMagic,
    #[error("raw depth file declares {expected} values, found {actual} bytes of data")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("grid dimensions {width}x{height} are not a 2:1 sphere")]
    BadDims { width: u32, height: u32 },
    #[error("depth value {value} at index {index} is not positive")]
    NonPositiveDepth { index: usize, value: f32 },
    #[error("value count {actual} does not match {width}x{height}")]
    ValueCount { width: u32, height: u32, actual: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthGrid {
    dims: PanoDims,
    values: Vec<f32>,
}

impl DepthGrid {
    /// Builds a grid from row-major values; finite values must be positive.
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self, DepthError> {
        let dims = PanoDims::new(width, height).map_err(|_| DepthError::BadDims { width, height })?;
        if values.len() != width as usize * height as usize {
            return Err(DepthError::ValueCount {
                width,
                height,
                actual: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| v.is_infinite() || (v.is_finite() && **v <= 0.0))
        {
            return Err(DepthError::NonPositiveDepth { index, value });
        }
        Ok(Self { dims, values })
    }

    pub fn dims(&self) -> PanoDims {
        self.dims
    }

    pub fn width(&self) -> u32 {
        self.dims.width()
    }

    pub fn height(&self) -> u32 {
        self.dims.height()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: u32, col: u32) -> f32 {
        self.values[row as usize * self.width() as usize + col as usize]
    }

    /// Grid cell nearest to a panorama pixel, by proportional scaling of
    /// both axes. Columns wrap, rows clamp.
    pub fn cell_for(&self, pano_pixel: PixelCoord, pano_dims: PanoDims) -> (u32, u32) {
        let (gw, gh) = (self.width(), self.height());
        let sx = f64::from(gw) / f64::from(pano_dims.width());
        let sy = f64::from(gh) / f64::from(pano_dims.height());
        let col = ((pano_pixel.x * sx).round() as i64).rem_euclid(i64::from(gw)) as u32;
        let row = ((pano_pixel.y * sy).round().max(0.0) as u32).min(gh - 1);
        (row, col)
    }
}

/// Depth at a panorama pixel from the nearest grid cell. `NaN` means no
/// measurement.
pub fn sample_depth(grid: &DepthGrid, pano_pixel: PixelCoord, pano_dims: PanoDims) -> f64 {
    let (row, col) = grid.cell_for(pano_pixel, pano_dims);
    f64::from(grid.get(row, col))
}

/// A plane `{p : normal · p = d}` in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: [f32; 3],
    pub d: f32,
}

impl Plane {
    /// Distance along `ray` to the plane, `NaN` when the hit is behind the
    /// camera, at infinity or undefined.
    pub fn intersect(&self, ray: Vec3) -> f64 {
        let n = Vec3::new(
            f64::from(self.normal[0]),
            f64::from(self.normal[1]),
            f64::from(self.normal[2]),
        );
        let t = f64::from(self.d) / n.dot(&ray);
        if t.is_finite() && t > 0.0 {
            t
        } else {
            f64::NAN
        }
    }
}

/// Intermediate representation of a plane-based depth payload.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSet {
    pub width: u16,
    pub height: u16,
    pub planes: Vec<Plane>,
    /// Row-major per-pixel plane index into `planes`. Index 0 means "no
    /// plane", so `planes[0]` is a placeholder.
    pub indices: Vec<u8>,
}

impl PlaneSet {
    /// Depth per pixel: `d / (normal · ray)` for the indexed plane.
    pub fn to_grid(&self) -> Result<DepthGrid, DepthError> {
        let (w, h) = (u32::from(self.width), u32::from(self.height));
        let dims = PanoDims::new(w, h).map_err(|_| DepthError::BadDims { width: w, height: h })?;
        let mut values = Vec::with_capacity(self.indices.len());
        for (i, &idx) in self.indices.iter().enumerate() {
            if idx == 0 {
                values.push(f32::NAN);
                continue;
            }
            let plane = self.planes.get(usize::from(idx)).ok_or(DepthError::PlaneIndexOutOfRange {
                pixel: i,
                index: idx,
                count: self.planes.len(),
            })?;
            let (row, col) = (i as u32 / w, i as u32 % w);
            let ray = pixel_ray(PixelCoord::new(f64::from(col), f64::from(row)), dims)
                .expect("pixel inside its own grid");
            values.push(plane.intersect(ray) as f32);
        }
        // Plane hits that overflow or underflow f32 are not measurements.
        for v in &mut values {
            if v.is_infinite() || *v == 0.0 {
                *v = f32::NAN;
            }
        }
        DepthGrid::new(w, h, values)
    }
}

/// Seam between the payload wire format and the rest of the pipeline.
pub trait DepthDecoder {
    fn decode(&self, payload: &str) -> Result<DepthGrid, DepthError>;
}

/// Street-view plane-based depth layout, URL-safe Base64.
///
/// Little-endian layout: `u8 header_size (=8)`, `u16 plane_count`,
/// `u16 width`, `u16 height`, `u8 offset`, then `width * height` u8 plane
/// indices, then `plane_count` planes of four f32 `(nx, ny, nz, d)`.
/// Plane 0 is a placeholder; index 0 marks pixels with no plane.
#[derive(Debug, Clone, Copy, Default)]
pub struct GsvPlaneCodec;

fn base64_engine() -> GeneralPurpose {
    GeneralPurpose::new(
        &alphabet::URL_SAFE,
        GeneralPurposeConfig::new()
            .with_encode_padding(false)
            .with_decode_padding_mode(DecodePaddingMode::Indifferent)
            .with_decode_allow_trailing_bits(true),
    )
}

impl GsvPlaneCodec {
    pub fn parse(&self, payload: &str) -> Result<PlaneSet, DepthError> {
        let cleaned: String = payload.chars().filter(|c| !c.is_ascii_whitespace()).collect();
        let bytes = base64_engine()
            .decode(cleaned.as_bytes())
            .map_err(|e| DepthError::MalformedBase64(e.to_string()))?;
        parse_plane_bytes(&bytes)
    }

    pub fn encode(&self, set: &PlaneSet) -> String {
        base64_engine().encode(plane_bytes(set))
    }
}

impl DepthDecoder for GsvPlaneCodec {
    fn decode(&self, payload: &str) -> Result<DepthGrid, DepthError> {
        self.parse(payload)?.to_grid()
    }
}

/// Decodes a street-view depth payload with [`GsvPlaneCodec`].
pub fn decode_gsv_depth(payload: &str) -> Result<DepthGrid, DepthError> {
    GsvPlaneCodec.decode(payload)
}

fn parse_plane_bytes(bytes: &[u8]) -> Result<PlaneSet, DepthError> {
    if bytes.len() < usize::from(PAYLOAD_HEADER_SIZE) {
        return Err(DepthError::TruncatedPayload {
            expected: usize::from(PAYLOAD_HEADER_SIZE),
            actual: bytes.len(),
        });
    }
    let header_size = bytes[0];
    if header_size != PAYLOAD_HEADER_SIZE {
        return Err(DepthError::BadHeader(format!("header_size {header_size}, expected 8")));
    }
    let le16 = |at: usize| u16::from_le_bytes([bytes[at], bytes[at + 1]]);
    let plane_count = le16(1);
    let width = le16(3);
    let height = le16(5);
    if height == 0 || u32::from(width) != 2 * u32::from(height) {
        return Err(DepthError::BadHeader(format!("grid {width}x{height} is not 2:1")));
    }
    let n_pixels = usize::from(width) * usize::from(height);
    let start = usize::from(header_size);
    let expected = start + n_pixels + usize::from(plane_count) * 16;
    if bytes.len() < expected {
        return Err(DepthError::TruncatedPayload {
            expected,
            actual: bytes.len(),
        });
    }
    let indices = bytes[start..start + n_pixels].to_vec();
    let f32_at = |at: usize| f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
    let planes = (0..usize::from(plane_count))
        .map(|i| {
            let at = start + n_pixels + i * 16;
            Plane {
                normal: [f32_at(at), f32_at(at + 4), f32_at(at + 8)],
                d: f32_at(at + 12),
            }
        })
        .collect();
    Ok(PlaneSet {
        width,
        height,
        planes,
        indices,
    })
}

fn plane_bytes(set: &PlaneSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + set.indices.len() + set.planes.len() * 16);
    out.push(PAYLOAD_HEADER_SIZE);
    out.extend_from_slice(&(set.planes.len() as u16).to_le_bytes());
    out.extend_from_slice(&set.width.to_le_bytes());
    out.extend_from_slice(&set.height.to_le_bytes());
    out.push(PAYLOAD_HEADER_SIZE);
    out.extend_from_slice(&set.indices);
    for p in &set.planes {
        for v in [p.normal[0], p.normal[1], p.normal[2], p.d] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Serializes a grid to the raw `LFEDEPTH` format.
pub fn write_raw_grid(grid: &DepthGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + grid.values.len() * 4);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&grid.width().to_le_bytes());
    out.extend_from_slice(&grid.height().to_le_bytes());
    for v in &grid.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_raw_grid(bytes: &[u8]) -> Result<DepthGrid, DepthError> {
    if bytes.len() < 8 || &bytes[..8] != RAW_MAGIC {
        return Err(DepthError::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(DepthError::SizeMismatch {
            expected: 0,
            actual: bytes.len() - 8,
        });
    }
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let data = &bytes[16..];
    let expected = width as usize * height as usize;
    if data.len() != expected * 4 {
        return Err(DepthError::SizeMismatch {
            expected,
            actual: data.len(),
        });
    }
    let values = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    DepthGrid::new(width, height, values)
}
