use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use lfe_core::PipelineConfig;

#[derive(Debug, Parser)]
#[command(name = "lfe", version, about = "Lowest floor elevation from street-view panoramas")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Pipeline settings. Flags override the config file, which overrides the
/// built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file with pipeline settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub fov_deg: Option<f64>,
    #[arg(long)]
    pub min_points: Option<usize>,
    #[arg(long)]
    pub outlier_k: Option<f64>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Download missing tiles over HTTP (needs the `live-fetch` build feature).
    #[arg(long)]
    pub live_fetch: bool,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.fov_deg {
            cfg.crop.fov_deg = v;
        }
        if let Some(v) = self.min_points {
            cfg.extraction.min_points = v;
        }
        if let Some(v) = self.outlier_k {
            cfg.extraction.outlier_k = v;
        }
        if let Some(v) = self.concurrency {
            cfg.concurrency = v;
        }
        if self.live_fetch {
            cfg.live_fetch = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the LFE of every parcel and write a GeoJSON result file.
    Estimate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        parcels: PathBuf,
        /// Directory of panorama metadata (`{id}.json`) and depth (`{id}.depth` or `{id}.b64`).
        #[arg(long)]
        panos: PathBuf,
        /// Directory of mask bundles, one subdirectory per panorama.
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an estimate file against ground-truth parcels.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        /// Parcels GeoJSON with `lfe_truth_m` and optionally `front_door_visible`.
        #[arg(long)]
        truth: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, default_value = "LFE")]
        model: String,
    },
    /// Score predicted door masks against ground-truth masks.
    EvalSeg {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Panorama metadata, used for crops that wrap the seam.
        #[arg(long)]
        panos: Option<PathBuf>,
        /// Wall-clock segmentation time, for the FPS column.
        #[arg(long)]
        elapsed_s: Option<f64>,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, default_value = "segmenter")]
        model: String,
    },
    /// Render analytic scenes into an estimation input tree.
    Synth {
        /// SceneSpec JSON: one object or an array.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a base64 plane payload into a raw depth grid.
    DecodeDepth {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stitch `{row}_{col}` tiles into one panorama image.
    Stitch {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Tile directory, or the tile root when `--panorama-id` is given.
        #[arg(long)]
        tiles: PathBuf,
        #[arg(long)]
        panorama_id: Option<String>,
        #[arg(long)]
        rows: Option<u32>,
        #[arg(long)]
        cols: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
}
