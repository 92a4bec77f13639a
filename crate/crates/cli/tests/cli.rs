mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use image::{Rgb, RgbImage};
use lfe_cli::{cmd_decode_depth, cmd_estimate, cmd_eval, cmd_eval_seg, cmd_stitch, cmd_synth, ConfigArgs};
use lfe_core::depthcodec::{read_raw_grid, GsvPlaneCodec, Plane, PlaneSet};
use lfe_core::ingest::parcels_to_geojson;
use lfe_core::maskio::write_mask_bundle;
use lfe_core::synth::{render_scene, DoorSpec, SceneSpec};
use lfe_core::{GeoCoordinate, PanoDims, Parcel, PipelineConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn features(path: &Path) -> Vec<Value> {
    let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["features"].as_array().unwrap().clone()
}

fn one_scene() -> SceneSpec {
    let door = DoorSpec {
        center_offset_m: 0.0,
        width_m: 1.0,
        bottom_elev_m: 1.0,
        height_m: 2.0,
    };
    let mut spec = SceneSpec::new(2.5, 0.0, 6.0, 0.0, door, PanoDims::new(1024, 512).unwrap());
    spec.panorama_id = "p1".into();
    spec.property_id = "A1".into();
    spec
}

fn lfe_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lfe"))
}

#[test]
fn synthetic_bundle_estimates_one_available_property() {
    let dir = tempfile::tempdir().unwrap();
    let scene_path = dir.path().join("scene.json");
    fs::write(&scene_path, serde_json::to_string(&one_scene()).unwrap()).unwrap();
    let tree = dir.path().join("tree");
    assert_eq!(cmd_synth(&scene_path, &tree).unwrap(), 1);

    let fx = common::Fixture::at(&tree);
    let out = dir.path().join("out.geojson");
    let summary = cmd_estimate(&PipelineConfig::default(), &fx.parcels, &fx.panos, &fx.masks, &out).unwrap();
    assert_eq!((summary.n_available, summary.n_total), (1, 1));
    assert_eq!(summary.to_string(), "available 1/1 (100.00%)");
    let feats = features(&out);
    assert_eq!(feats.len(), 1);
    let props = &feats[0]["properties"];
    assert_eq!(props["status"], "Available");
    assert_eq!(props["panorama_id"], "p1");
    assert_eq!(props["camera_elev_m"], 2.5);
    let lfe = props["lfe_m"].as_f64().unwrap();
    let tol = 6.0 * (180.0f64 / 512.0).to_radians().sin() + 0.01;
    assert!((lfe - 1.0).abs() <= tol, "lfe {lfe}");
    assert!(props["n_points_used"].as_u64().unwrap() >= 5);
}

#[test]
fn parcel_without_mask_is_unavailable_no_mask() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = one_scene();
    spec.depth_dims = PanoDims::new(256, 128).unwrap();
    let scene = render_scene(&spec).unwrap();
    let stranger = Parcel {
        property_id: "B2".into(),
        centroid: scene.asset.camera.destination(200.0, 12.0),
        lfe_truth_m: None,
        front_door_visible: None,
    };
    let fx = common::write_fixture(dir.path(), std::slice::from_ref(&scene), &[scene.parcel.clone(), stranger]);
    let out = dir.path().join("out.geojson");
    cmd_estimate(&PipelineConfig::default(), &fx.parcels, &fx.panos, &fx.masks, &out).unwrap();
    let feats = features(&out);
    assert_eq!(feats[0]["properties"]["property_id"], "A1");
    assert_eq!(feats[1]["properties"]["status"], "Unavailable");
    assert_eq!(feats[1]["properties"]["reason"], "NoMask");
    assert_eq!(feats[1]["properties"]["n_points_used"], 0);

    // Without a mask directory for the panorama the result is the same.
    fs::remove_dir_all(fx.masks.join("p1")).unwrap();
    cmd_estimate(&PipelineConfig::default(), &fx.parcels, &fx.panos, &fx.masks, &out).unwrap();
    assert_eq!(features(&out)[0]["properties"]["reason"], "NoMask");
}

#[test]
fn missing_depth_file_is_a_per_property_status() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = one_scene();
    spec.depth_dims = PanoDims::new(256, 128).unwrap();
    let scene = render_scene(&spec).unwrap();
    let fx = common::write_fixture(dir.path(), std::slice::from_ref(&scene), std::slice::from_ref(&scene.parcel));
    fs::remove_file(fx.panos.join("p1.depth")).unwrap();
    let out = dir.path().join("out.geojson");
    let summary = cmd_estimate(&PipelineConfig::default(), &fx.parcels, &fx.panos, &fx.masks, &out).unwrap();
    assert_eq!(summary.n_available, 0);
    assert_eq!(features(&out)[0]["properties"]["reason"], "DepthMissing");
}

#[test]
fn shared_root_bundle_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = one_scene();
    spec.depth_dims = PanoDims::new(256, 128).unwrap();
    let scene = render_scene(&spec).unwrap();
    let fx = common::write_fixture(dir.path(), std::slice::from_ref(&scene), std::slice::from_ref(&scene.parcel));
    let flat = dir.path().join("flat_masks");
    write_mask_bundle(&flat, "p1", std::slice::from_ref(&scene.mask)).unwrap();
    let out = dir.path().join("out.geojson");
    let summary = cmd_estimate(&PipelineConfig::default(), &fx.parcels, &fx.panos, &flat, &out).unwrap();
    assert_eq!(summary.n_available, 1);
}

#[test]
fn empty_parcel_file_gives_empty_collection_and_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let parcels = dir.path().join("parcels.geojson");
    fs::write(&parcels, parcels_to_geojson(&[])).unwrap();
    let out = dir.path().join("out.geojson");
    let status = lfe_bin()
        .args(["estimate", "--parcels"])
        .arg(&parcels)
        .arg("--panos")
        .arg(dir.path().join("nowhere"))
        .arg("--masks")
        .arg(dir.path().join("nowhere"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(features(&out).is_empty());
    assert_eq!(String::from_utf8_lossy(&status.stdout).trim(), "available 0/0");
}

#[test]
fn file_level_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = lfe_bin()
        .args(["estimate", "--parcels", "/nonexistent/parcels.geojson", "--panos", ".", "--masks", ".", "--out"])
        .arg(dir.path().join("o.geojson"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let bad = dir.path().join("bad.b64");
    fs::write(&bad, "!!!not base64!!!").unwrap();
    let out = lfe_bin()
        .args(["decode-depth", "--input"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("x.depth"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn unavailable_rows_do_not_change_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = one_scene();
    spec.depth_dims = PanoDims::new(256, 128).unwrap();
    let scene = render_scene(&spec).unwrap();
    let fx = common::write_fixture(dir.path(), &[], &[]);
    // A panorama and a parcel but no masks at all.
    fs::create_dir_all(&fx.panos).unwrap();
    fs::write(
        fx.panos.join("p1.json"),
        serde_json::to_string(&scene.asset.to_metadata()).unwrap(),
    )
    .unwrap();
    fs::write(&fx.parcels, parcels_to_geojson(std::slice::from_ref(&scene.parcel))).unwrap();
    let out = lfe_bin()
        .args(["estimate", "--parcels"])
        .arg(&fx.parcels)
        .arg("--panos")
        .arg(&fx.panos)
        .arg("--masks")
        .arg(&fx.masks)
        .arg("--out")
        .arg(dir.path().join("o.geojson"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("available 0/1 (0.00%)"));
}

#[test]
fn eval_of_truth_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let mut scenes = Vec::new();
    for (i, bottom) in [0.5, 1.0, 1.5].into_iter().enumerate() {
        let mut spec = one_scene();
        spec.depth_dims = PanoDims::new(512, 256).unwrap();
        spec.door.bottom_elev_m = bottom;
        spec.panorama_id = format!("p{i}");
        spec.property_id = format!("A{i}");
        let cam = common::camera_position(i);
        spec.camera_lat = cam.lat();
        spec.camera_lon = cam.lon();
        scenes.push(render_scene(&spec).unwrap());
    }
    let parcels: Vec<Parcel> = scenes.iter().map(|s| s.parcel.clone()).collect();
    let fx = common::write_fixture(dir.path(), &scenes, &parcels);
    let out = dir.path().join("out.geojson");
    cmd_estimate(&PipelineConfig::default(), &fx.parcels, &fx.panos, &fx.masks, &out).unwrap();

    // Truth equal to the predictions.
    let preds = features(&out);
    let truth: Vec<Parcel> = parcels
        .iter()
        .zip(&preds)
        .map(|(p, f)| Parcel {
            lfe_truth_m: f["properties"]["lfe_m"].as_f64(),
            ..p.clone()
        })
        .collect();
    let truth_path = dir.path().join("truth.geojson");
    fs::write(&truth_path, parcels_to_geojson(&truth)).unwrap();
    let report = cmd_eval(&out, &truth_path).unwrap();
    assert_eq!(report.mae_m, Some(0.0));
    assert_eq!(report.availability_pct, Some(100.0));
    assert_eq!(report.availability_visible_pct, Some(100.0));

    // Against the scene truth, MAE equals a direct recomputation.
    let report = cmd_eval(&out, &fx.parcels).unwrap();
    let direct: f64 = preds
        .iter()
        .zip(&parcels)
        .map(|(f, p)| (f["properties"]["lfe_m"].as_f64().unwrap() - p.lfe_truth_m.unwrap()).abs())
        .sum::<f64>()
        / 3.0;
    assert!((report.mae_m.unwrap() - direct).abs() < 1e-12);
}

#[test]
fn eval_without_shared_ids_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = |id: &str| Parcel {
        property_id: id.into(),
        centroid: GeoCoordinate::new(29.68, -95.45).unwrap(),
        lfe_truth_m: Some(1.0),
        front_door_visible: None,
    };
    let preds = dir.path().join("p.geojson");
    fs::write(
        &preds,
        r#"{"type":"FeatureCollection","features":[{"type":"Feature","geometry":null,"properties":{"property_id":"X","status":"Available","lfe_m":1.0}}]}"#,
    )
    .unwrap();
    let truth = dir.path().join("t.geojson");
    fs::write(&truth, parcels_to_geojson(&[p("Y")])).unwrap();
    assert!(cmd_eval(&preds, &truth).is_err());
}

#[test]
fn decode_all_nan_payload() {
    let dir = tempfile::tempdir().unwrap();
    let set = PlaneSet {
        width: 8,
        height: 4,
        planes: vec![Plane {
            normal: [0.0, 0.0, 0.0],
            d: 0.0,
        }],
        indices: vec![0; 32],
    };
    let input = dir.path().join("d.b64");
    fs::write(&input, GsvPlaneCodec.encode(&set) + "\n").unwrap();
    let out = dir.path().join("d.depth");
    cmd_decode_depth(&input, &out).unwrap();
    let grid = read_raw_grid(&fs::read(&out).unwrap()).unwrap();
    assert_eq!((grid.width(), grid.height()), (8, 4));
    assert!(grid.values().iter().all(|v| v.is_nan()));
}

#[test]
fn eval_seg_of_identical_bundles_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = one_scene();
    spec.depth_dims = PanoDims::new(256, 128).unwrap();
    let scene = render_scene(&spec).unwrap();
    let fx = common::write_fixture(dir.path(), std::slice::from_ref(&scene), std::slice::from_ref(&scene.parcel));
    let report = cmd_eval_seg(&fx.masks, &fx.masks, Some(&fx.panos), Some(2.0)).unwrap();
    assert_eq!(report.iou_pct, Some(100.0));
    assert_eq!(report.ap50_pct, Some(100.0));
    assert_eq!(report.fps, Some(0.5));
    let table = report.to_table("oracle");
    assert!(table.contains("100.00"));

    // A prediction shifted by half its width overlaps well below 50%.
    let mut shifted = scene.mask.clone();
    shifted.crop_origin.x += shifted.crop_w();
    let pred = dir.path().join("pred");
    write_mask_bundle(&pred.join("p1"), "p1", &[shifted]).unwrap();
    let report = cmd_eval_seg(&pred, &fx.masks, None, None).unwrap();
    assert_eq!(report.ap50_pct, Some(0.0));
    assert!(report.iou_pct.unwrap() < 50.0);
    assert_eq!(report.fps, None);
}

#[test]
fn stitch_two_by_two() {
    let dir = tempfile::tempdir().unwrap();
    let tiles = dir.path().join("tiles").join("pp");
    fs::create_dir_all(&tiles).unwrap();
    for r in 0..2u8 {
        for c in 0..2u8 {
            RgbImage::from_pixel(512, 512, Rgb([r * 100, c * 100, 7]))
                .save(tiles.join(format!("{r}_{c}.png")))
                .unwrap();
        }
    }
    let out = dir.path().join("pano.png");
    let dims = cmd_stitch(&PipelineConfig::default(), &dir.path().join("tiles"), Some("pp"), None, None, &out).unwrap();
    assert_eq!(dims, (1024, 1024));
    let img = image::open(&out).unwrap().to_rgb8();
    assert_eq!(img.get_pixel(600, 10), &Rgb([0, 100, 7]));
    assert_eq!(img.get_pixel(10, 600), &Rgb([100, 0, 7]));

    // A declared 2x3 grid with only four tiles is missing two.
    assert!(cmd_stitch(&PipelineConfig::default(), &tiles, None, Some(2), Some(3), &out).is_err());
}

#[test]
fn live_fetch_requires_build_feature() {
    let cfg = PipelineConfig {
        live_fetch: true,
        ..PipelineConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let r = cmd_stitch(&cfg, dir.path(), Some("x"), Some(1), Some(1), &dir.path().join("o.png"));
    if cfg!(feature = "live-fetch") {
        assert!(r.is_err(), "no template configured");
    } else {
        assert!(r.unwrap_err().to_string().contains("live-fetch"));
    }
}

#[test]
fn config_precedence_flags_over_file_over_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lfe.toml");
    fs::write(&path, "min_points = 9\noutlier_k = 2.5\nfov_deg = 60.0\n").unwrap();
    let args = ConfigArgs {
        config: Some(path.clone()),
        outlier_k: Some(4.0),
        ..ConfigArgs::default()
    };
    let cfg = args.resolve().unwrap();
    assert_eq!(cfg.extraction.outlier_k, 4.0);
    assert_eq!(cfg.extraction.min_points, 9);
    assert_eq!(cfg.crop.fov_deg, 60.0);
    assert_eq!(cfg.extraction.mad_floor_m, 0.01);
    assert_eq!(cfg.concurrency, 4);

    let bad = ConfigArgs {
        min_points: Some(0),
        ..ConfigArgs::default()
    };
    assert!(bad.resolve().is_err());
    fs::write(&path, "fov_deg = \"wide\"\n").unwrap();
    assert!(ConfigArgs {
        config: Some(path),
        ..ConfigArgs::default()
    }
    .resolve()
    .is_err());
}

#[test]
fn min_points_flag_reaches_the_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = one_scene();
    spec.depth_dims = PanoDims::new(256, 128).unwrap();
    let scene = render_scene(&spec).unwrap();
    let fx = common::write_fixture(dir.path(), std::slice::from_ref(&scene), std::slice::from_ref(&scene.parcel));
    let out = dir.path().join("o.geojson");
    let run = |min_points: &str| {
        lfe_bin()
            .args(["estimate", "--min-points", min_points, "--concurrency", "2", "--parcels"])
            .arg(&fx.parcels)
            .arg("--panos")
            .arg(&fx.panos)
            .arg("--masks")
            .arg(&fx.masks)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap()
    };
    assert!(run("5").status.success());
    assert_eq!(features(&out)[0]["properties"]["status"], "Available");
    assert!(run("100000").status.success());
    assert_eq!(features(&out)[0]["properties"]["reason"], "NoDoorBottom");
}

#[test]
fn eval_prints_paper_style_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (fx, _) = common::availability_fixture(dir.path(), &mut rng);
    let out = dir.path().join("o.geojson");
    cmd_estimate(&PipelineConfig::default(), &fx.parcels, &fx.panos, &fx.masks, &out).unwrap();
    let json = dir.path().join("report.json");
    let o = lfe_bin()
        .args(["eval", "--predictions"])
        .arg(&out)
        .arg("--truth")
        .arg(&fx.parcels)
        .arg("--json")
        .arg(&json)
        .output()
        .unwrap();
    assert!(o.status.success());
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("55.99") && table.contains("98.71"), "{table}");
    let report: Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert!((report["availability_pct"].as_f64().unwrap() - 100.0 * 229.0 / 409.0).abs() < 1e-12);
}
