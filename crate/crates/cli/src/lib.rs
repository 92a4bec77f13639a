//! Batch commands behind the `lfe` binary.
//!
//! Each `cmd_*` function is one subcommand. File-level problems (unreadable
//! or malformed inputs) are errors; a property that cannot be estimated is an
//! `Unavailable` row in the output instead.

pub mod args;
pub mod fetch;
pub mod geojson;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use lfe_core::depthcodec::{decode_gsv_depth, write_raw_grid};
use lfe_core::extraction::estimate_lfe;
use lfe_core::ingest::{load_pano_depth, load_pano_dir, load_parcels, load_tile_dir, select_viewpoint, IngestError};
use lfe_core::maskio::read_mask_bundle;
use lfe_core::metrics::{self, ConfusionCounts, Detection, EvalReport, GroundTruth, PixelSet};
use lfe_core::synth::{parse_scenes, render_scene, write_scenes, RenderedScene};
use lfe_core::{DepthGrid, LfeRecord, LfeStatus, PanoAsset, Parcel, PipelineConfig, SegMask, UnavailableReason};
use rayon::prelude::*;

pub use args::{Cli, Command, ConfigArgs};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateSummary {
    pub n_total: usize,
    pub n_available: usize,
}

impl EstimateSummary {
    pub fn availability_pct(&self) -> Option<f64> {
        metrics::availability(self.n_available, self.n_total).ok()
    }
}

impl fmt::Display for EstimateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "available {}/{}", self.n_available, self.n_total)?;
        if let Some(p) = self.availability_pct() {
            write!(f, " ({p:.2}%)")?;
        }
        Ok(())
    }
}

fn thread_pool(concurrency: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(concurrency).build()?)
}

/// Masks in `dir`: a single bundle, or one bundle per subdirectory.
pub fn load_bundles(dir: &Path) -> Result<Vec<SegMask>> {
    if dir.join("manifest.json").is_file() {
        return Ok(read_mask_bundle(dir)?);
    }
    let mut subdirs: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    subdirs.sort();
    let mut masks = Vec::new();
    for sub in subdirs {
        masks.extend(read_mask_bundle(&sub)?);
    }
    Ok(masks)
}

fn unavailable(parcel: &Parcel, asset: &PanoAsset, reason: UnavailableReason) -> LfeRecord {
    LfeRecord {
        property_id: parcel.property_id.clone(),
        panorama_id: asset.panorama_id.clone(),
        status: LfeStatus::Unavailable(reason),
        lfe_m: None,
        n_points_used: 0,
        camera_elev_m: asset.camera_elev_m,
    }
}

/// Estimates every parcel; the result is in parcel order.
pub fn estimate_parcels(
    cfg: &PipelineConfig,
    parcels: &[Parcel],
    assets: &[PanoAsset],
    panos_dir: &Path,
    masks_dir: &Path,
) -> Result<Vec<LfeRecord>> {
    if parcels.is_empty() {
        return Ok(Vec::new());
    }
    let mut index = HashMap::new();
    for (i, a) in assets.iter().enumerate() {
        if index.insert(a.panorama_id.as_str(), i).is_some() {
            bail!("duplicate panorama_id {}", a.panorama_id);
        }
    }
    // Group parcels by viewpoint so each depth grid and bundle is read once.
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pi, parcel) in parcels.iter().enumerate() {
        let asset = select_viewpoint(parcel, assets)?;
        groups.entry(index[asset.panorama_id.as_str()]).or_default().push(pi);
    }
    let shared_bundle = if masks_dir.join("manifest.json").is_file() {
        Some(read_mask_bundle(masks_dir)?)
    } else {
        None
    };

    let groups: Vec<(usize, Vec<usize>)> = groups.into_iter().collect();
    let pool = thread_pool(cfg.concurrency)?;
    let results: Vec<Result<Vec<(usize, LfeRecord)>>> = pool.install(|| {
        groups
            .par_iter()
            .map(|(ai, members)| {
                let asset = &assets[*ai];
                let bundle_dir = masks_dir.join(&asset.panorama_id);
                let masks: Vec<SegMask> = match &shared_bundle {
                    Some(all) => all.iter().filter(|m| m.panorama_id == asset.panorama_id).cloned().collect(),
                    None if bundle_dir.join("manifest.json").is_file() => read_mask_bundle(&bundle_dir)?,
                    None => Vec::new(),
                };
                let depth: Option<DepthGrid> = match load_pano_depth(panos_dir, &asset.panorama_id) {
                    Ok(d) => Some(d),
                    Err(IngestError::MissingDepth(_)) => None,
                    Err(e) => return Err(e.into()),
                };
                Ok(members
                    .iter()
                    .map(|&pi| {
                        let parcel = &parcels[pi];
                        let rec = match &depth {
                            Some(d) => estimate_lfe(&parcel.property_id, asset, d, &masks, &cfg.extraction),
                            None if masks.iter().any(|m| m.property_id == parcel.property_id) => {
                                unavailable(parcel, asset, UnavailableReason::DepthMissing)
                            }
                            None => unavailable(parcel, asset, UnavailableReason::NoMask),
                        };
                        (pi, rec)
                    })
                    .collect())
            })
            .collect()
    });
    let mut records: Vec<Option<LfeRecord>> = vec![None; parcels.len()];
    for group in results {
        for (pi, rec) in group? {
            records[pi] = Some(rec);
        }
    }
    Ok(records.into_iter().map(|r| r.expect("every parcel is assigned")).collect())
}

pub fn cmd_estimate(
    cfg: &PipelineConfig,
    parcels_path: &Path,
    panos_dir: &Path,
    masks_dir: &Path,
    out: &Path,
) -> Result<EstimateSummary> {
    cfg.validate()?;
    if cfg.live_fetch {
        fetch::require_support()?;
    }
    let parcels = load_parcels(parcels_path)?;
    let assets = if parcels.is_empty() {
        Vec::new()
    } else {
        load_pano_dir(panos_dir)?
    };
    let records = estimate_parcels(cfg, &parcels, &assets, panos_dir, masks_dir)?;
    let summary = EstimateSummary {
        n_total: records.len(),
        n_available: records.iter().filter(|r| r.status.is_available()).count(),
    };
    let rows: Vec<(Parcel, LfeRecord)> = parcels.into_iter().zip(records).collect();
    fs::write(out, geojson::records_to_geojson(&rows)).with_context(|| format!("writing {}", out.display()))?;
    Ok(summary)
}

pub fn cmd_eval(predictions: &Path, truth: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(predictions).with_context(|| format!("reading {}", predictions.display()))?;
    let preds = geojson::parse_predictions(&text).with_context(|| format!("in {}", predictions.display()))?;
    let truth = load_parcels(truth)?;
    let by_id: HashMap<&str, &Parcel> = truth.iter().map(|p| (p.property_id.as_str(), p)).collect();
    let matched: Vec<(&geojson::Prediction, &Parcel)> = preds
        .iter()
        .filter_map(|p| by_id.get(p.property_id.as_str()).map(|t| (p, *t)))
        .collect();
    if matched.is_empty() {
        bail!("predictions and truth share no property_id");
    }
    let n_available = matched.iter().filter(|(p, _)| p.status.is_available()).count();
    let availability_pct = Some(metrics::availability(n_available, matched.len())?);

    let availability_visible_pct = if truth.iter().any(|t| t.front_door_visible.is_some()) {
        let visible: Vec<_> = matched.iter().filter(|(_, t)| t.front_door_visible == Some(true)).collect();
        let n = visible.iter().filter(|(p, _)| p.status.is_available()).count();
        metrics::availability(n, visible.len()).ok()
    } else {
        None
    };

    let pairs: Vec<(f64, f64)> = matched
        .iter()
        .filter_map(|(p, t)| Some((p.lfe_m?, t.lfe_truth_m?)))
        .collect();
    Ok(EvalReport {
        mae_m: metrics::mae(&pairs).ok(),
        availability_pct,
        availability_visible_pct,
        ..EvalReport::default()
    })
}

pub fn cmd_eval_seg(pred: &Path, gt: &Path, panos: Option<&Path>, elapsed_s: Option<f64>) -> Result<EvalReport> {
    let pred = load_bundles(pred)?;
    let gt = load_bundles(gt)?;
    let widths: HashMap<String, u32> = match panos {
        Some(dir) => load_pano_dir(dir)?
            .into_iter()
            .map(|a| (a.panorama_id, a.dims.width()))
            .collect(),
        None => HashMap::new(),
    };
    // Without metadata the crop is taken not to wrap.
    let pixels = |m: &SegMask| -> PixelSet {
        let w = widths.get(&m.panorama_id).copied().unwrap_or(u32::MAX);
        m.pano_pixels(w).collect()
    };

    let images: BTreeSet<&str> = pred.iter().chain(&gt).map(|m| m.panorama_id.as_str()).collect();
    let mut counts = ConfusionCounts::default();
    for image in &images {
        let union = |set: &[SegMask]| -> PixelSet {
            set.iter()
                .filter(|m| m.panorama_id == *image)
                .flat_map(|m| pixels(m).0)
                .collect()
        };
        counts.add(ConfusionCounts::from_pixel_sets(&union(&pred), &union(&gt)));
    }

    let detections: Vec<Detection<PixelSet>> = pred
        .iter()
        .map(|m| Detection {
            image_id: m.panorama_id.clone(),
            score: m.score,
            region: pixels(m),
        })
        .collect();
    let truths: Vec<GroundTruth<PixelSet>> = gt
        .iter()
        .map(|m| GroundTruth {
            image_id: m.panorama_id.clone(),
            region: pixels(m),
        })
        .collect();
    Ok(EvalReport {
        iou_pct: Some(counts.iou_pct()),
        ap50_pct: Some(metrics::ap50(&detections, &truths)),
        fps: elapsed_s.and_then(|s| metrics::fps(images.len(), s)),
        ..EvalReport::default()
    })
}

pub fn cmd_synth(scene: &Path, out: &Path) -> Result<usize> {
    let text = fs::read_to_string(scene).with_context(|| format!("reading {}", scene.display()))?;
    let specs = parse_scenes(&text)?;
    let mut seen = BTreeSet::new();
    for s in &specs {
        if !seen.insert(s.panorama_id.as_str()) {
            bail!("panorama_id {} appears in more than one scene", s.panorama_id);
        }
    }
    let scenes: Vec<RenderedScene> = specs.par_iter().map(render_scene).collect::<Result<_, _>>()?;
    write_scenes(out, &scenes)?;
    Ok(scenes.len())
}

pub fn cmd_decode_depth(input: &Path, out: &Path) -> Result<DepthGrid> {
    let payload = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let grid = decode_gsv_depth(payload.trim())?;
    fs::write(out, write_raw_grid(&grid)).with_context(|| format!("writing {}", out.display()))?;
    Ok(grid)
}

pub fn cmd_stitch(
    cfg: &PipelineConfig,
    tiles: &Path,
    panorama_id: Option<&str>,
    rows: Option<u32>,
    cols: Option<u32>,
    out: &Path,
) -> Result<(u32, u32)> {
    let dir = match panorama_id {
        Some(id) => tiles.join(id),
        None => tiles.to_path_buf(),
    };
    if cfg.live_fetch {
        fetch::require_support()?;
        let (Some(id), Some(r), Some(c)) = (panorama_id, rows, cols) else {
            bail!("live fetch needs --panorama-id, --rows and --cols");
        };
        let Some(template) = &cfg.tile_url_template else {
            bail!("live fetch needs tile_url_template in the config file");
        };
        fetch::fetch_tiles(template, id, r, c, &dir, cfg.concurrency)?;
    }
    let image = load_tile_dir(&dir, rows, cols)?.stitch()?;
    image.save(out).with_context(|| format!("writing {}", out.display()))?;
    Ok(image.dimensions())
}

fn write_report(report: &EvalReport, model: &str, json: Option<&Path>, log: &mut dyn Write) -> Result<()> {
    write!(log, "{}", report.to_table(model))?;
    if let Some(path) = json {
        let text = serde_json::to_string_pretty(report)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Runs one parsed command line, printing progress to `log`.
pub fn run(cli: Cli, log: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Estimate {
            cfg,
            parcels,
            panos,
            masks,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let summary = cmd_estimate(&cfg, &parcels, &panos, &masks, &out)?;
            writeln!(log, "{summary}")?;
        }
        Command::Eval {
            predictions,
            truth,
            json,
            model,
        } => {
            let report = cmd_eval(&predictions, &truth)?;
            write_report(&report, &model, json.as_deref(), log)?;
        }
        Command::EvalSeg {
            pred,
            gt,
            panos,
            elapsed_s,
            json,
            model,
        } => {
            let report = cmd_eval_seg(&pred, &gt, panos.as_deref(), elapsed_s)?;
            write_report(&report, &model, json.as_deref(), log)?;
        }
        Command::Synth { scene, out } => {
            let n = cmd_synth(&scene, &out)?;
            writeln!(log, "rendered {n} scene(s) into {}", out.display())?;
        }
        Command::DecodeDepth { input, out } => {
            let grid = cmd_decode_depth(&input, &out)?;
            writeln!(log, "decoded {}x{} depth grid", grid.width(), grid.height())?;
        }
        Command::Stitch {
            cfg,
            tiles,
            panorama_id,
            rows,
            cols,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let (w, h) = cmd_stitch(&cfg, &tiles, panorama_id.as_deref(), rows, cols, &out)?;
            writeln!(log, "stitched {w}x{h} panorama")?;
        }
    }
    Ok(())
}
