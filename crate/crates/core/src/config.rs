//! Pipeline configuration and its defaults.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("fov_deg {0} outside (0, 360]")]
    Fov(f64),
    #[error("v_frac {0} outside (0, 1]")]
    VFrac(f64),
    #[error("outlier_k {0} must be positive")]
    OutlierK(f64),
    #[error("mad_floor_m {0} must be non-negative")]
    MadFloor(f64),
    #[error("min_points must be at least 1")]
    MinPoints,
    #[error("concurrency must be at least 1")]
    Concurrency,
}

/// Building crop around the property column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropConfig {
    /// Horizontal field of view of the crop, degrees.
    pub fov_deg: f64,
    /// Crop height as a fraction of the panorama height.
    pub v_frac: f64,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            fov_deg: 90.0,
            v_frac: 0.5,
        }
    }
}

/// Door-bottom filtering and acceptance thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    /// Points above `median + outlier_k * max(MAD, mad_floor_m)` are dropped.
    pub outlier_k: f64,
    pub mad_floor_m: f64,
    /// Fewest door-bottom points an estimate may rest on.
    pub min_points: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            outlier_k: 3.0,
            mad_floor_m: 0.01,
            min_points: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewpointStrategyKind {
    #[default]
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    #[serde(flatten)]
    pub crop: CropConfig,
    #[serde(flatten)]
    pub extraction: ExtractionConfig,
    pub viewpoint: ViewpointStrategyKind,
    pub live_fetch: bool,
    /// URL template for live tile fetches; `{panorama_id}`, `{row}`, `{col}`
    /// and `{key}` are substituted.
    pub tile_url_template: Option<String>,
    pub concurrency: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            crop: CropConfig::default(),
            extraction: ExtractionConfig::default(),
            viewpoint: ViewpointStrategyKind::Nearest,
            live_fetch: false,
            tile_url_template: None,
            concurrency: 4,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.crop;
        if !(c.fov_deg > 0.0 && c.fov_deg <= 360.0) {
            return Err(ConfigError::Fov(c.fov_deg));
        }
        if !(c.v_frac > 0.0 && c.v_frac <= 1.0) {
            return Err(ConfigError::VFrac(c.v_frac));
        }
        let e = &self.extraction;
        if e.outlier_k.is_nan() || e.outlier_k <= 0.0 {
            return Err(ConfigError::OutlierK(e.outlier_k));
        }
        if e.mad_floor_m.is_nan() || e.mad_floor_m < 0.0 {
            return Err(ConfigError::MadFloor(e.mad_floor_m));
        }
        if e.min_points == 0 {
            return Err(ConfigError::MinPoints);
        }
        if self.concurrency == 0 {
            return Err(ConfigError::Concurrency);
        }
        Ok(())
    }
}
