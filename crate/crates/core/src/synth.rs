//! Analytic street scene: a ground plane, one vertical facade and a door
//! rectangle on it.
//!
//! Rendering casts the ray of every depth-grid cell against the two planes,
//! and the ray of every panorama pixel near the door against the door
//! rectangle. The result is a depth grid, a ground-truth door mask and the
//! panorama metadata, so the whole estimation pipeline can be checked
//! against a closed-form door-bottom elevation.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depthcodec::{write_raw_grid, DepthError, DepthGrid};
use crate::geocore::{azimuth_to_column, pitch_to_row, pixel_ray, GeoCoordinate, PanoDims, PixelCoord, Vec3};
use crate::ingest::{parcels_to_geojson, PanoAsset, Parcel};
use crate::maskio::{write_mask_bundle, BitMask, CropOrigin, MaskIoError, SegMask};

/// Columns and rows of background kept around the door in the mask crop.
const MASK_MARGIN_PX: i64 = 2;
const PROPERTY_SETBACK_M: f64 = 5.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error(transparent)]
    Depth(#[from] DepthError),
    #[error(transparent)]
    Mask(#[from] MaskIoError),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoorSpec {
    /// Lateral offset of the door center from the facade foot point, meters,
    /// positive to the right when facing the facade.
    pub center_offset_m: f64,
    pub width_m: f64,
    pub bottom_elev_m: f64,
    pub height_m: f64,
}

fn default_pano_scale() -> u32 {
    8
}

fn default_id() -> String {
    "synth".into()
}

fn default_lat() -> f64 {
    29.68
}

fn default_lon() -> f64 {
    -95.45
}

fn default_date() -> String {
    "2023-07-01".into()
}

fn default_prompt() -> String {
    "The door in the front of the house".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Camera height above the ground plane.
    pub camera_height_m: f64,
    /// Camera elevation in the vertical datum.
    pub camera_elev_m: f64,
    pub ground_elev_m: f64,
    pub facade_distance_m: f64,
    /// Azimuth of the facade's foot point relative to the vehicle heading.
    pub facade_azimuth_deg: f64,
    pub door: DoorSpec,
    pub depth_dims: PanoDims,
    /// Panorama resolution as a multiple of the depth grid's.
    #[serde(default = "default_pano_scale")]
    pub pano_scale: u32,
    #[serde(default = "default_id")]
    pub panorama_id: String,
    #[serde(default = "default_id")]
    pub property_id: String,
    #[serde(default = "default_lat")]
    pub camera_lat: f64,
    #[serde(default = "default_lon")]
    pub camera_lon: f64,
    #[serde(default)]
    pub yaw_deg: f64,
    #[serde(default = "default_date")]
    pub capture_date: String,
    #[serde(default = "default_prompt")]
    pub prompt: String,
    /// Amplitude of zero-mean uniform noise added to every finite depth.
    #[serde(default)]
    pub depth_noise_m: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

impl SceneSpec {
    /// A scene with default identifiers and placement.
    pub fn new(
        camera_height_m: f64,
        ground_elev_m: f64,
        facade_distance_m: f64,
        facade_azimuth_deg: f64,
        door: DoorSpec,
        depth_dims: PanoDims,
    ) -> Self {
        Self {
            camera_height_m,
            camera_elev_m: ground_elev_m + camera_height_m,
            ground_elev_m,
            facade_distance_m,
            facade_azimuth_deg,
            door,
            depth_dims,
            pano_scale: default_pano_scale(),
            panorama_id: default_id(),
            property_id: default_id(),
            camera_lat: default_lat(),
            camera_lon: default_lon(),
            yaw_deg: 0.0,
            capture_date: default_date(),
            prompt: default_prompt(),
            depth_noise_m: 0.0,
            noise_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidScene(m.to_string()));
        let d = &self.door;
        let finite = [
            self.camera_height_m,
            self.camera_elev_m,
            self.ground_elev_m,
            self.facade_distance_m,
            self.facade_azimuth_deg,
            d.center_offset_m,
            d.width_m,
            d.bottom_elev_m,
            d.height_m,
            self.depth_noise_m,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("non-finite scene parameter");
        }
        if self.camera_height_m <= 0.0 {
            return bad("camera_height_m must be positive");
        }
        if (self.camera_elev_m - self.camera_height_m - self.ground_elev_m).abs() > 1e-9 {
            return bad("camera_elev_m - camera_height_m must equal ground_elev_m");
        }
        if self.facade_distance_m <= 0.0 {
            return bad("facade_distance_m must be positive");
        }
        if !(-180.0..=180.0).contains(&self.facade_azimuth_deg) {
            return bad("facade_azimuth_deg outside [-180, 180]");
        }
        if d.width_m <= 0.0 || d.height_m <= 0.0 {
            return bad("door width and height must be positive");
        }
        if d.bottom_elev_m < self.ground_elev_m {
            return bad("door bottom below ground");
        }
        if d.center_offset_m.abs() + d.width_m / 2.0 >= 10.0 * self.facade_distance_m {
            return bad("door too far along the facade");
        }
        if self.pano_scale == 0 || self.depth_dims.scaled(self.pano_scale).is_err() {
            return bad("pano_scale must be a positive multiple that keeps dimensions in range");
        }
        if self.depth_noise_m < 0.0 {
            return bad("depth_noise_m must be non-negative");
        }
        if GeoCoordinate::new(self.camera_lat, self.camera_lon).is_err() {
            return bad("camera coordinates out of range");
        }
        if crate::ingest::parse_capture_date(&self.capture_date).is_none() {
            return bad("capture_date is not an ISO-8601 date");
        }
        Ok(())
    }

    pub fn pano_dims(&self) -> PanoDims {
        self.depth_dims.scaled(self.pano_scale).expect("validated")
    }

    fn facade_normal(&self) -> Vec3 {
        let a = self.facade_azimuth_deg.to_radians();
        Vec3::new(a.sin(), a.cos(), 0.0)
    }

    /// Unit vector along the facade, to the right when facing it.
    fn facade_tangent(&self) -> Vec3 {
        let a = self.facade_azimuth_deg.to_radians();
        Vec3::new(a.cos(), -a.sin(), 0.0)
    }

    fn door_lateral_range(&self) -> (f64, f64) {
        let half = self.door.width_m / 2.0;
        (self.door.center_offset_m - half, self.door.center_offset_m + half)
    }

    /// Door rectangle elevations relative to the camera.
    fn door_rel_z_range(&self) -> (f64, f64) {
        let lo = self.door.bottom_elev_m - self.camera_elev_m;
        (lo, lo + self.door.height_m)
    }

    /// Azimuth of a point on the facade at `lateral` meters from the foot.
    pub fn facade_point_azimuth(&self, lateral: f64) -> f64 {
        self.facade_azimuth_deg + lateral.atan2(self.facade_distance_m).to_degrees()
    }

    /// First surface along `ray` (unit, camera frame).
    pub fn trace(&self, ray: Vec3) -> Hit {
        let ground_t = if ray.z < 0.0 {
            self.camera_height_m / -ray.z
        } else {
            f64::INFINITY
        };
        let facing = ray.dot(&self.facade_normal());
        let facade_t = if facing > 0.0 {
            self.facade_distance_m / facing
        } else {
            f64::INFINITY
        };
        if facade_t.is_finite() && facade_t <= ground_t {
            let p = ray.scale(facade_t);
            Hit::Facade {
                depth_m: facade_t,
                lateral_m: p.dot(&self.facade_tangent()),
                rel_z_m: p.z,
            }
        } else if ground_t.is_finite() {
            Hit::Ground { depth_m: ground_t }
        } else {
            Hit::Sky
        }
    }

    pub fn is_door(&self, hit: &Hit) -> bool {
        match *hit {
            Hit::Facade { lateral_m, rel_z_m, .. } => {
                let (l0, l1) = self.door_lateral_range();
                let (z0, z1) = self.door_rel_z_range();
                (l0..=l1).contains(&lateral_m) && (z0..=z1).contains(&rel_z_m)
            }
            _ => false,
        }
    }

    /// Pixel box in the panorama that contains every door pixel.
    fn door_pixel_box(&self) -> (i64, u32, u32, u32) {
        let dims = self.pano_dims();
        let (w, h) = (f64::from(dims.width()), i64::from(dims.height()));
        let (l0, l1) = self.door_lateral_range();
        let x_left = azimuth_to_column(self.facade_point_azimuth(l0), dims);
        let span = (self.facade_point_azimuth(l1) - self.facade_point_azimuth(l0)) / 360.0 * w;
        let x0 = x_left.floor() as i64 - MASK_MARGIN_PX;
        let width = (span.ceil() as i64 + 1 + 2 * MASK_MARGIN_PX).min(i64::from(dims.width()));

        // For a fixed height the pitch is monotone in horizontal distance, so
        // the extremes sit at the door edges or at the point nearest the foot.
        let (z0, z1) = self.door_rel_z_range();
        let laterals = [l0, l1, 0.0f64.clamp(l0, l1)];
        let mut pitches = Vec::with_capacity(6);
        for s in laterals {
            let rho = self.facade_distance_m.hypot(s);
            for z in [z0, z1] {
                pitches.push(z.atan2(rho).to_degrees());
            }
        }
        let max_pitch = pitches.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min_pitch = pitches.iter().copied().fold(f64::INFINITY, f64::min);
        let y0 = (pitch_to_row(max_pitch, dims).floor() as i64 - MASK_MARGIN_PX).clamp(0, h - 1);
        let y1 = (pitch_to_row(min_pitch, dims).ceil() as i64 + MASK_MARGIN_PX).clamp(0, h - 1);
        let origin_x = x0.rem_euclid(i64::from(dims.width()));
        (origin_x, y0 as u32, width as u32, (y1 - y0 + 1) as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hit {
    Ground { depth_m: f64 },
    Facade { depth_m: f64, lateral_m: f64, rel_z_m: f64 },
    Sky,
}

impl Hit {
    pub fn depth_m(&self) -> f64 {
        match *self {
            Hit::Ground { depth_m } | Hit::Facade { depth_m, .. } => depth_m,
            Hit::Sky => f64::NAN,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub depth: DepthGrid,
    pub mask: SegMask,
    pub asset: PanoAsset,
    pub parcel: Parcel,
}

pub fn render_scene(spec: &SceneSpec) -> Result<RenderedScene, SynthError> {
    spec.validate()?;
    let depth_dims = spec.depth_dims;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
    let mut values = Vec::with_capacity(depth_dims.width() as usize * depth_dims.height() as usize);
    for row in 0..depth_dims.height() {
        for col in 0..depth_dims.width() {
            let ray = pixel_ray(PixelCoord::new(f64::from(col), f64::from(row)), depth_dims).expect("inside grid");
            let mut d = spec.trace(ray).depth_m();
            if spec.depth_noise_m > 0.0 && d.is_finite() {
                d += rng.random_range(-spec.depth_noise_m..=spec.depth_noise_m);
                if d <= 0.0 {
                    d = f64::NAN;
                }
            }
            values.push(d as f32);
        }
    }
    let depth = DepthGrid::new(depth_dims.width(), depth_dims.height(), values)?;

    let pano_dims = spec.pano_dims();
    let (ox, oy, cw, ch) = spec.door_pixel_box();
    let crop_origin = CropOrigin { x: ox as u32, y: oy };
    let bitmap = BitMask::from_fn(cw, ch, |u, v| {
        let x = (ox + i64::from(u)).rem_euclid(i64::from(pano_dims.width()));
        let ray = pixel_ray(PixelCoord::new(x as f64, f64::from(oy + v)), pano_dims).expect("inside panorama");
        spec.is_door(&spec.trace(ray))
    });
    let mask = SegMask {
        property_id: spec.property_id.clone(),
        panorama_id: spec.panorama_id.clone(),
        crop_origin,
        bitmap,
        score: 1.0,
        prompt: spec.prompt.clone(),
        model_id: "synth-oracle".into(),
    };

    let camera = GeoCoordinate::new(spec.camera_lat, spec.camera_lon).expect("validated");
    let capture_date: NaiveDate = crate::ingest::parse_capture_date(&spec.capture_date).expect("validated");
    let asset = PanoAsset {
        panorama_id: spec.panorama_id.clone(),
        dims: pano_dims,
        camera,
        camera_elev_m: spec.camera_elev_m,
        yaw_deg: spec.yaw_deg.rem_euclid(360.0),
        capture_date,
    };
    let door_bearing = spec.yaw_deg + spec.facade_point_azimuth(spec.door.center_offset_m);
    let door_dist = spec.facade_distance_m.hypot(spec.door.center_offset_m);
    let parcel = Parcel {
        property_id: spec.property_id.clone(),
        centroid: camera.destination(door_bearing, door_dist + PROPERTY_SETBACK_M),
        lfe_truth_m: Some(spec.door.bottom_elev_m),
        front_door_visible: Some(true),
    };
    Ok(RenderedScene {
        depth,
        mask,
        asset,
        parcel,
    })
}

/// Exact camera-to-door-bottom distance at the door's center column.
pub fn analytic_door_bottom_depth(spec: &SceneSpec) -> f64 {
    let dz = spec.camera_elev_m - spec.door.bottom_elev_m;
    (spec.facade_distance_m.powi(2) + spec.door.center_offset_m.powi(2) + dz.powi(2)).sqrt()
}

/// One scene object or an array of them.
#[derive(Deserialize)]
#[serde(untagged)]
enum SceneFile {
    One(Box<SceneSpec>),
    Many(Vec<SceneSpec>),
}

pub fn parse_scenes(text: &str) -> Result<Vec<SceneSpec>, SynthError> {
    match serde_json::from_str(text) {
        Ok(SceneFile::One(s)) => Ok(vec![*s]),
        Ok(SceneFile::Many(v)) => Ok(v),
        Err(e) => Err(SynthError::InvalidScene(e.to_string())),
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes rendered scenes as an estimation input tree:
///
/// * `panos/{panorama_id}.json` and `panos/{panorama_id}.depth`
/// * `masks/{panorama_id}/manifest.json` plus bitmaps
/// * `parcels.geojson` with ground-truth elevations
pub fn write_scenes(out_dir: &Path, scenes: &[RenderedScene]) -> Result<(), SynthError> {
    let panos = out_dir.join("panos");
    let masks = out_dir.join("masks");
    fs::create_dir_all(&panos).map_err(io_err(&panos))?;
    fs::create_dir_all(&masks).map_err(io_err(&masks))?;
    let mut by_pano: Vec<(&str, Vec<SegMask>)> = Vec::new();
    for scene in scenes {
        let id = &scene.asset.panorama_id;
        let meta_path = panos.join(format!("{id}.json"));
        let meta = serde_json::to_string_pretty(&scene.asset.to_metadata()).expect("metadata serializes");
        fs::write(&meta_path, meta).map_err(io_err(&meta_path))?;
        let depth_path = panos.join(format!("{id}.depth"));
        fs::write(&depth_path, write_raw_grid(&scene.depth)).map_err(io_err(&depth_path))?;
        match by_pano.iter_mut().find(|(p, _)| *p == id.as_str()) {
            Some((_, list)) => list.push(scene.mask.clone()),
            None => by_pano.push((id, vec![scene.mask.clone()])),
        }
    }
    for (id, list) in &by_pano {
        write_mask_bundle(&masks.join(id), id, list)?;
    }
    let parcels: Vec<Parcel> = scenes.iter().map(|s| s.parcel.clone()).collect();
    let path = out_dir.join("parcels.geojson");
    fs::write(&path, parcels_to_geojson(&parcels)).map_err(io_err(&path))
}
