//! Data preparation: panorama metadata, parcels, viewpoint selection,
//! building crops and tile stitching.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use image::{ImageBuffer, Pixel, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::config::CropConfig;
use crate::depthcodec::{decode_gsv_depth, read_raw_grid, DepthError, DepthGrid};
use crate::geocore::{
    azimuth_from_heading, azimuth_to_column, bearing_angle, GeoCoordinate, GeoError, PanoDims, PixelCoord,
};

pub const TILE_SIZE: u32 = 512;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing tiles at (row, col): {}", fmt_coords(.0))]
    MissingTile(Vec<(u32, u32)>),
    #[error("tile ({row}, {col}) is {width}x{height}, expected 512x512")]
    SizeMismatch { row: u32, col: u32, width: u32, height: u32 },
    #[error("no candidate panoramas for property {0}")]
    NoCandidates(String),
    #[error("parse error in {path}: {reason}")]
    ParseError { path: PathBuf, reason: String },
    #[error("feature {index} in {path} has no property_id")]
    MissingId { path: PathBuf, index: usize },
    #[error("panorama {panorama_id}: {reason}")]
    BadMetadata { panorama_id: String, reason: String },
    #[error("no depth file for panorama {0} (expected .depth or .b64)")]
    MissingDepth(String),
    #[error("depth for panorama {panorama_id}: {source}")]
    Depth {
        panorama_id: String,
        #[source]
        source: DepthError,
    },
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn fmt_coords(coords: &[(u32, u32)]) -> String {
    coords
        .iter()
        .map(|(r, c)| format!("({r},{c})"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One panorama and its capture metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct PanoAsset {
    pub panorama_id: String,
    pub dims: PanoDims,
    pub camera: GeoCoordinate,
    pub camera_elev_m: f64,
    /// Vehicle heading, degrees clockwise from North in `[0, 360)`.
    pub yaw_deg: f64,
    pub capture_date: NaiveDate,
}

/// On-disk panorama metadata record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanoMetadata {
    pub panorama_id: String,
    pub width: u32,
    pub height: u32,
    pub lat: f64,
    pub lon: f64,
    pub camera_elev_m: f64,
    pub yaw_deg: f64,
    pub capture_date: String,
}

/// Parses `YYYY-MM-DD`, or `YYYY-MM` as the first of the month.
pub fn parse_capture_date(text: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(&format!("{text}-01"), "%Y-%m-%d"))
        .ok()
}

impl PanoAsset {
    pub fn from_metadata(meta: &PanoMetadata) -> Result<Self, IngestError> {
        let bad = |reason: String| IngestError::BadMetadata {
            panorama_id: meta.panorama_id.clone(),
            reason,
        };
        let dims = PanoDims::new(meta.width, meta.height).map_err(|e| bad(e.to_string()))?;
        let camera = GeoCoordinate::new(meta.lat, meta.lon).map_err(|e| bad(e.to_string()))?;
        if !meta.camera_elev_m.is_finite() || !meta.yaw_deg.is_finite() {
            return Err(bad("camera_elev_m and yaw_deg must be finite".into()));
        }
        let capture_date =
            parse_capture_date(&meta.capture_date).ok_or_else(|| bad(format!("bad capture_date {:?}", meta.capture_date)))?;
        let mut yaw_deg = meta.yaw_deg.rem_euclid(360.0);
        if yaw_deg >= 360.0 {
            yaw_deg = 0.0;
        }
        Ok(Self {
            panorama_id: meta.panorama_id.clone(),
            dims,
            camera,
            camera_elev_m: meta.camera_elev_m,
            yaw_deg,
            capture_date,
        })
    }

    pub fn to_metadata(&self) -> PanoMetadata {
        PanoMetadata {
            panorama_id: self.panorama_id.clone(),
            width: self.dims.width(),
            height: self.dims.height(),
            lat: self.camera.lat(),
            lon: self.camera.lon(),
            camera_elev_m: self.camera_elev_m,
            yaw_deg: self.yaw_deg,
            capture_date: self.capture_date.format("%Y-%m-%d").to_string(),
        }
    }
}

/// Reads every `*.json` metadata file in `dir`, sorted by file name.
pub fn load_pano_dir(dir: &Path) -> Result<Vec<PanoAsset>, IngestError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|path| {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let meta: PanoMetadata = serde_json::from_str(&text).map_err(|e| IngestError::ParseError {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            PanoAsset::from_metadata(&meta)
        })
        .collect()
}

/// Loads `{dir}/{panorama_id}.depth` (raw grid) or, failing that,
/// `{dir}/{panorama_id}.b64` (plane-based payload).
pub fn load_pano_depth(dir: &Path, panorama_id: &str) -> Result<DepthGrid, IngestError> {
    let depth_err = |source| IngestError::Depth {
        panorama_id: panorama_id.to_string(),
        source,
    };
    let raw = dir.join(format!("{panorama_id}.depth"));
    if raw.is_file() {
        let bytes = fs::read(&raw).map_err(io_err(&raw))?;
        return read_raw_grid(&bytes).map_err(depth_err);
    }
    let b64 = dir.join(format!("{panorama_id}.b64"));
    if b64.is_file() {
        let text = fs::read_to_string(&b64).map_err(io_err(&b64))?;
        return decode_gsv_depth(&text).map_err(depth_err);
    }
    Err(IngestError::MissingDepth(panorama_id.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parcel {
    pub property_id: String,
    pub centroid: GeoCoordinate,
    pub lfe_truth_m: Option<f64>,
    /// Whether the front door is visible from the street, when known.
    pub front_door_visible: Option<bool>,
}

/// Reads a GeoJSON FeatureCollection of parcels. Polygons are reduced to the
/// area centroid of their outer ring, points are used as-is.
pub fn load_parcels(path: &Path) -> Result<Vec<Parcel>, IngestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_parcels(&text, path)
}

pub fn parse_parcels(text: &str, path: &Path) -> Result<Vec<Parcel>, IngestError> {
    let parse_err = |reason: String| IngestError::ParseError {
        path: path.to_path_buf(),
        reason,
    };
    let root: Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(parse_err("not a FeatureCollection".into()));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("missing features array".into()))?;
    features
        .iter()
        .enumerate()
        .map(|(index, feature)| {
            let props = feature.get("properties").unwrap_or(&Value::Null);
            let property_id = match props.get("property_id") {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Number(n)) => n.to_string(),
                _ => {
                    return Err(IngestError::MissingId {
                        path: path.to_path_buf(),
                        index,
                    })
                }
            };
            let geometry = feature
                .get("geometry")
                .ok_or_else(|| parse_err(format!("feature {property_id} has no geometry")))?;
            let (lon, lat) =
                geometry_centroid(geometry).map_err(|reason| parse_err(format!("feature {property_id}: {reason}")))?;
            let centroid = GeoCoordinate::new(lat, lon).map_err(|e| parse_err(format!("feature {property_id}: {e}")))?;
            Ok(Parcel {
                property_id,
                centroid,
                lfe_truth_m: props.get("lfe_truth_m").and_then(Value::as_f64),
                front_door_visible: props.get("front_door_visible").and_then(Value::as_bool),
            })
        })
        .collect()
}

/// Point FeatureCollection that [`parse_parcels`] reads back unchanged.
pub fn parcels_to_geojson(parcels: &[Parcel]) -> String {
    let features: Vec<Value> = parcels
        .iter()
        .map(|p| {
            let mut props = serde_json::Map::new();
            props.insert("property_id".into(), p.property_id.clone().into());
            if let Some(t) = p.lfe_truth_m {
                props.insert("lfe_truth_m".into(), t.into());
            }
            if let Some(v) = p.front_door_visible {
                props.insert("front_door_visible".into(), v.into());
            }
            serde_json::json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [p.centroid.lon(), p.centroid.lat()]},
                "properties": props,
            })
        })
        .collect();
    let root = serde_json::json!({"type": "FeatureCollection", "features": features});
    serde_json::to_string_pretty(&root).expect("json values serialize")
}

fn position(v: &Value) -> Result<(f64, f64), String> {
    match v.as_array().map(Vec::as_slice) {
        Some([x, y, ..]) => match (x.as_f64(), y.as_f64()) {
            (Some(x), Some(y)) => Ok((x, y)),
            _ => Err("non-numeric position".into()),
        },
        _ => Err("position needs two numbers".into()),
    }
}

/// Signed area and area-weighted centroid sums of a ring (shoelace).
fn ring_moments(ring: &[(f64, f64)]) -> (f64, f64, f64) {
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    // Translate to the first vertex to keep the cross products small.
    let (x0, y0) = ring[0];
    for w in ring.windows(2) {
        let (xa, ya) = (w[0].0 - x0, w[0].1 - y0);
        let (xb, yb) = (w[1].0 - x0, w[1].1 - y0);
        let cross = xa * yb - xb * ya;
        a += cross;
        cx += (xa + xb) * cross;
        cy += (ya + yb) * cross;
    }
    (a / 2.0, cx / 6.0 + x0 * a / 2.0, cy / 6.0 + y0 * a / 2.0)
}

fn outer_ring(polygon: &Value) -> Result<Vec<(f64, f64)>, String> {
    let ring = polygon
        .as_array()
        .and_then(|rings| rings.first())
        .and_then(Value::as_array)
        .ok_or("polygon has no outer ring")?;
    let mut pts = ring.iter().map(position).collect::<Result<Vec<_>, _>>()?;
    if pts.len() < 3 {
        return Err("ring has fewer than 3 positions".into());
    }
    if pts.first() != pts.last() {
        pts.push(pts[0]);
    }
    Ok(pts)
}

/// `(x, y)` centroid of a Point, Polygon or MultiPolygon geometry.
fn geometry_centroid(geometry: &Value) -> Result<(f64, f64), String> {
    let coords = geometry.get("coordinates").ok_or("geometry has no coordinates")?;
    let polygons = match geometry.get("type").and_then(Value::as_str) {
        Some("Point") => return position(coords),
        Some("Polygon") => vec![coords],
        Some("MultiPolygon") => coords.as_array().ok_or("bad MultiPolygon")?.iter().collect(),
        other => return Err(format!("unsupported geometry type {other:?}")),
    };
    let (mut area, mut mx, mut my) = (0.0, 0.0, 0.0);
    let mut first_vertex = None;
    for polygon in polygons {
        let ring = outer_ring(polygon)?;
        first_vertex.get_or_insert(ring[0]);
        let (a, cx, cy) = ring_moments(&ring);
        area += a;
        mx += cx;
        my += cy;
    }
    if area.abs() < f64::EPSILON * 1e-6 {
        return first_vertex.ok_or_else(|| "empty geometry".into());
    }
    Ok((mx / area, my / area))
}

/// Chooses the panorama a property is estimated from.
pub trait ViewpointSelector {
    fn select<'a>(&self, property: &Parcel, candidates: &'a [PanoAsset]) -> Result<&'a PanoAsset, IngestError>;
}

/// Nearest camera by great-circle distance; ties go to the latest capture,
/// then the lexicographically smallest panorama id.
#[derive(Debug, Clone, Copy, Default)]
pub struct NearestCamera;

impl ViewpointSelector for NearestCamera {
    fn select<'a>(&self, property: &Parcel, candidates: &'a [PanoAsset]) -> Result<&'a PanoAsset, IngestError> {
        candidates
            .iter()
            .min_by(|a, b| {
                let da = a.camera.distance_m(&property.centroid);
                let db = b.camera.distance_m(&property.centroid);
                da.total_cmp(&db)
                    .then_with(|| b.capture_date.cmp(&a.capture_date))
                    .then_with(|| a.panorama_id.cmp(&b.panorama_id))
            })
            .ok_or_else(|| IngestError::NoCandidates(property.property_id.clone()))
    }
}

pub fn select_viewpoint<'a>(property: &Parcel, candidates: &'a [PanoAsset]) -> Result<&'a PanoAsset, IngestError> {
    NearestCamera.select(property, candidates)
}

/// A crop of a panorama; columns wrap at the seam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropRegion {
    pub origin: PixelCoord,
    pub width_px: u32,
    pub height_px: u32,
    pub pano: PanoDims,
}

impl CropRegion {
    pub fn to_pano(&self, u: f64, v: f64) -> PixelCoord {
        let w = f64::from(self.pano.width());
        PixelCoord::new((self.origin.x + u).rem_euclid(w), self.origin.y + v)
    }

    /// Crop coordinates of a panorama pixel, if the crop contains it.
    pub fn to_crop(&self, p: PixelCoord) -> Option<(f64, f64)> {
        let w = f64::from(self.pano.width());
        let u = (p.x - self.origin.x).rem_euclid(w);
        let v = p.y - self.origin.y;
        (u < f64::from(self.width_px) && (0.0..f64::from(self.height_px)).contains(&v)).then_some((u, v))
    }

    /// Center column in panorama space.
    pub fn center_column(&self) -> f64 {
        let w = f64::from(self.pano.width());
        (self.origin.x + f64::from(self.width_px) / 2.0).rem_euclid(w)
    }
}

/// Crop centered on the property's column and the horizon row.
pub fn crop_building(asset: &PanoAsset, property: &Parcel, cfg: &CropConfig) -> Result<CropRegion, GeoError> {
    let bearing = bearing_angle(&asset.camera, &property.centroid)?;
    let azimuth = azimuth_from_heading(bearing, asset.yaw_deg);
    Ok(crop_at_azimuth(azimuth, asset.dims, cfg))
}

pub fn crop_at_azimuth(azimuth_deg: f64, dims: PanoDims, cfg: &CropConfig) -> CropRegion {
    let w = f64::from(dims.width());
    let h = f64::from(dims.height());
    let center = azimuth_to_column(azimuth_deg, dims);
    let width_px = ((cfg.fov_deg / 360.0 * w).round() as u32).clamp(1, dims.width());
    let height_px = ((cfg.v_frac * h).round() as u32).clamp(1, dims.height());
    let x = (center - f64::from(width_px) / 2.0).rem_euclid(w);
    let y = h / 2.0 - f64::from(height_px) / 2.0;
    CropRegion {
        origin: PixelCoord::new(if x >= w { 0.0 } else { x }, y.max(0.0)),
        width_px,
        height_px,
        pano: dims,
    }
}

type Image<P> = ImageBuffer<P, Vec<<P as Pixel>::Subpixel>>;

/// Concatenates a `rows x cols` grid of 512x512 tiles. `tile(r, c)` returns
/// the tile at row `r`, column `c`.
pub fn stitch_tiles<'a, P, F>(rows: u32, cols: u32, tile: F) -> Result<Image<P>, IngestError>
where
    P: Pixel + 'a,
    F: Fn(u32, u32) -> Option<&'a Image<P>>,
{
    let mut missing = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            match tile(r, c) {
                None => missing.push((r, c)),
                Some(t) if t.dimensions() != (TILE_SIZE, TILE_SIZE) => {
                    return Err(IngestError::SizeMismatch {
                        row: r,
                        col: c,
                        width: t.width(),
                        height: t.height(),
                    })
                }
                Some(_) => {}
            }
        }
    }
    if !missing.is_empty() {
        return Err(IngestError::MissingTile(missing));
    }
    let channels = usize::from(P::CHANNEL_COUNT);
    let row_len = TILE_SIZE as usize * channels;
    let out_w = (TILE_SIZE * cols) as usize;
    let mut out: Image<P> = ImageBuffer::new(TILE_SIZE * cols, TILE_SIZE * rows);
    {
        let buf: &mut [P::Subpixel] = &mut out;
        for r in 0..rows {
            for c in 0..cols {
                let src: &[P::Subpixel] = tile(r, c).expect("checked above");
                for i in 0..TILE_SIZE as usize {
                    let y = r as usize * TILE_SIZE as usize + i;
                    let start = (y * out_w + c as usize * TILE_SIZE as usize) * channels;
                    buf[start..start + row_len].copy_from_slice(&src[i * row_len..(i + 1) * row_len]);
                }
            }
        }
    }
    Ok(out)
}

/// Tiles read from `tiles/{panorama_id}/{row}_{col}.png` (or `.jpg`).
#[derive(Debug, Default)]
pub struct TileGrid {
    pub rows: u32,
    pub cols: u32,
    pub tiles: HashMap<(u32, u32), RgbImage>,
}

fn parse_tile_name(path: &Path) -> Option<(u32, u32)> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    if !matches!(ext.as_str(), "png" | "jpg" | "jpeg") {
        return None;
    }
    let (r, c) = path.file_stem()?.to_str()?.split_once('_')?;
    Some((r.parse().ok()?, c.parse().ok()?))
}

/// Loads a tile directory. The grid extent is `rows x cols` when given,
/// otherwise one past the largest row and column present.
pub fn load_tile_dir(dir: &Path, rows: Option<u32>, cols: Option<u32>) -> Result<TileGrid, IngestError> {
    let mut grid = TileGrid::default();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let Some((r, c)) = parse_tile_name(&path) else { continue };
        let img = image::open(&path).map_err(|source| IngestError::Image {
            path: path.clone(),
            source,
        })?;
        grid.rows = grid.rows.max(r + 1);
        grid.cols = grid.cols.max(c + 1);
        grid.tiles.insert((r, c), img.to_rgb8());
    }
    grid.rows = rows.unwrap_or(grid.rows);
    grid.cols = cols.unwrap_or(grid.cols);
    Ok(grid)
}

impl TileGrid {
    pub fn stitch(&self) -> Result<RgbImage, IngestError> {
        stitch_tiles(self.rows, self.cols, |r, c| self.tiles.get(&(r, c)))
    }
}
