//! Fixture builders shared by the integration suites.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use lfe_core::ingest::parcels_to_geojson;
use lfe_core::maskio::BitMask;
use lfe_core::synth::{render_scene, write_scenes, DoorSpec, RenderedScene, SceneSpec};
use lfe_core::{GeoCoordinate, PanoDims, Parcel};
use rand::Rng;

pub const BASE_LAT: f64 = 29.68;
pub const BASE_LON: f64 = -95.45;
/// Camera spacing; far larger than any camera-to-parcel distance.
const CAMERA_SPACING_M: f64 = 200.0;

pub struct Fixture {
    pub root: PathBuf,
    pub parcels: PathBuf,
    pub panos: PathBuf,
    pub masks: PathBuf,
}

impl Fixture {
    pub fn at(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            parcels: root.join("parcels.geojson"),
            panos: root.join("panos"),
            masks: root.join("masks"),
        }
    }
}

pub fn camera_position(i: usize) -> GeoCoordinate {
    let origin = GeoCoordinate::new(BASE_LAT, BASE_LON).unwrap();
    origin
        .destination(0.0, CAMERA_SPACING_M * (i / 20) as f64)
        .destination(90.0, CAMERA_SPACING_M * (i % 20) as f64)
}

/// A scene drawn from the ranges of the synthetic recovery check.
pub fn random_scene(rng: &mut impl Rng, i: usize, depth_dims: PanoDims, pano_scale: u32) -> SceneSpec {
    let camera_height = rng.random_range(2.0..=3.0);
    let ground = rng.random_range(0.0..20.0);
    let door = DoorSpec {
        center_offset_m: rng.random_range(-0.5..=0.5),
        width_m: rng.random_range(0.8..=1.0),
        bottom_elev_m: ground + rng.random_range(0.0..=2.0),
        height_m: rng.random_range(2.0..=2.2),
    };
    let mut spec = SceneSpec::new(
        camera_height,
        ground,
        rng.random_range(3.0..=15.0),
        rng.random_range(-180.0..180.0),
        door,
        depth_dims,
    );
    let cam = camera_position(i);
    spec.camera_lat = cam.lat();
    spec.camera_lon = cam.lon();
    spec.yaw_deg = rng.random_range(0.0..360.0);
    spec.pano_scale = pano_scale;
    spec.panorama_id = format!("pano-{i:03}");
    spec.property_id = format!("prop-{i:03}");
    spec
}

pub fn write_fixture(root: &Path, scenes: &[RenderedScene], parcels: &[Parcel]) -> Fixture {
    write_scenes(root, scenes).unwrap();
    let fx = Fixture::at(root);
    fs::write(&fx.parcels, parcels_to_geojson(parcels)).unwrap();
    fx
}

pub struct AvailabilityCounts {
    pub total: usize,
    pub visible: usize,
    pub estimable: usize,
}

/// 409 parcels: 232 with a visible door and a mask, of which 229 can be
/// estimated. Two masks sit over the sky and one is three columns wide; the
/// other 177 parcels have no mask at all.
pub fn availability_fixture(root: &Path, rng: &mut impl Rng) -> (Fixture, AvailabilityCounts) {
    const TOTAL: usize = 409;
    const VISIBLE: usize = 232;
    let dims = PanoDims::new(128, 64).unwrap();
    let mut scenes = Vec::with_capacity(VISIBLE);
    for i in 0..VISIBLE {
        let mut spec = random_scene(rng, i, dims, 4);
        spec.facade_distance_m = rng.random_range(4.0..=8.0);
        scenes.push(render_scene(&spec).unwrap());
    }
    for scene in &mut scenes[0..2] {
        // Opposite the facade and above the horizon nothing is hit.
        let w = scene.asset.dims.width();
        scene.mask.crop_origin.x = (scene.mask.crop_origin.x + w / 2) % w;
        scene.mask.crop_origin.y = 2;
    }
    let m = &scenes[2].mask.bitmap;
    let first = m.ones().map(|(c, _)| c).min().unwrap();
    let narrow = BitMask::from_fn(m.width(), m.height(), |c, r| m.get(c, r) && c < first + 3);
    scenes[2].mask.bitmap = narrow;
    let mut parcels: Vec<Parcel> = scenes.iter().map(|s| s.parcel.clone()).collect();
    for k in 0..TOTAL - VISIBLE {
        let cam = scenes[k % VISIBLE].asset.camera;
        parcels.push(Parcel {
            property_id: format!("hidden-{k:03}"),
            centroid: cam.destination(rng.random_range(0.0..360.0), 15.0),
            lfe_truth_m: Some(rng.random_range(0.0..20.0)),
            front_door_visible: Some(false),
        });
    }
    let fx = write_fixture(root, &scenes, &parcels);
    (
        fx,
        AvailabilityCounts {
            total: TOTAL,
            visible: VISIBLE,
            estimable: VISIBLE - 3,
        },
    )
}
