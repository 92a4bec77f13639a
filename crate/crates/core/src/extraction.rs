//! Door-bottom extraction and LFE estimation.
//!
//! For a property's door mask, every column with a set pixel contributes its
//! lowest set pixel. Each such point is mapped into the panorama, given a
//! depth from the depth grid and a pitch from its row, and turned into an
//! elevation. High outliers are removed and the median of what remains is
//! the lowest floor elevation.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::ExtractionConfig;
use crate::depthcodec::{sample_depth, DepthGrid};
use crate::geocore::{elevation_from_depth, row_to_pitch, PixelCoord};
use crate::ingest::PanoAsset;
use crate::maskio::{BitMask, SegMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnavailableReason {
    NoMask,
    NoDoorBottom,
    DepthMissing,
}

impl fmt::Display for UnavailableReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            UnavailableReason::NoMask => "NoMask",
            UnavailableReason::NoDoorBottom => "NoDoorBottom",
            UnavailableReason::DepthMissing => "DepthMissing",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for UnavailableReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NoMask" => Ok(Self::NoMask),
            "NoDoorBottom" => Ok(Self::NoDoorBottom),
            "DepthMissing" => Ok(Self::DepthMissing),
            other => Err(format!("unknown reason {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfeStatus {
    Available,
    Unavailable(UnavailableReason),
}

impl LfeStatus {
    pub fn is_available(&self) -> bool {
        matches!(self, LfeStatus::Available)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LfeRecord {
    pub property_id: String,
    pub panorama_id: String,
    pub status: LfeStatus,
    /// Present iff the status is `Available`.
    pub lfe_m: Option<f64>,
    pub n_points_used: usize,
    pub camera_elev_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoorBottomPoint {
    pub pano_pixel: PixelCoord,
    /// `NaN` when the depth grid has no measurement.
    pub depth_m: f64,
    pub pitch_deg: f64,
    /// `NaN` when `depth_m` is.
    pub elevation_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoorBottomProfile {
    pub property_id: String,
    pub model_id: String,
    pub points: Vec<DoorBottomPoint>,
}

impl DoorBottomProfile {
    /// Elevations of points with a depth measurement, in column order.
    pub fn finite_elevations(&self) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| p.elevation_m)
            .filter(|e| e.is_finite())
            .collect()
    }
}

/// Lowest set pixel `(col, row)` of every column that has one, in column
/// order.
pub fn extract_door_bottom(mask: &BitMask) -> Vec<(u32, u32)> {
    (0..mask.width())
        .filter_map(|col| (0..mask.height()).rev().find(|&row| mask.get(col, row)).map(|row| (col, row)))
        .collect()
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let v = sorted(values);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Median absolute deviation about the median.
pub fn mad(values: &[f64]) -> Option<f64> {
    let m = median(values)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

/// Upper cut-off of the one-sided filter, `median + k * max(MAD, floor)`.
pub fn outlier_threshold(elevations: &[f64], cfg: &ExtractionConfig) -> Option<f64> {
    let m = median(elevations)?;
    let spread = mad(elevations)?.max(cfg.mad_floor_m);
    Some(m + cfg.outlier_k * spread)
}

/// Drops elevations above [`outlier_threshold`]; points at or below the
/// median are never dropped. Order is preserved.
pub fn filter_outliers(elevations: &[f64], cfg: &ExtractionConfig) -> Vec<f64> {
    match outlier_threshold(elevations, cfg) {
        Some(t) => elevations.iter().copied().filter(|e| *e <= t).collect(),
        None => Vec::new(),
    }
}

/// Highest score wins, ties go to the larger area, then to the earlier mask.
pub fn select_mask<'a>(masks: impl IntoIterator<Item = &'a SegMask>) -> Option<&'a SegMask> {
    masks.into_iter().fold(None, |best: Option<&SegMask>, m| match best {
        None => Some(m),
        Some(b) => {
            let ord = m.score.total_cmp(&b.score).then_with(|| m.area().cmp(&b.area()));
            if ord == Ordering::Greater {
                Some(m)
            } else {
                Some(b)
            }
        }
    })
}

/// Door-bottom profile of `mask` on `asset`'s panorama.
pub fn door_bottom_profile(asset: &PanoAsset, depth: &DepthGrid, mask: &SegMask) -> DoorBottomProfile {
    let dims = asset.dims;
    let points = extract_door_bottom(&mask.bitmap)
        .into_iter()
        .map(|(u, v)| {
            let (x, y) = mask.to_pano(u, v, dims.width());
            let pano_pixel = PixelCoord::new(f64::from(x), f64::from(y));
            let pitch_deg = row_to_pitch(pano_pixel.y, dims).expect("mask checked against panorama bounds");
            let depth_m = sample_depth(depth, pano_pixel, dims);
            let elevation_m = elevation_from_depth(depth_m, pitch_deg, asset.camera_elev_m).unwrap_or(f64::NAN);
            DoorBottomPoint {
                pano_pixel,
                depth_m,
                pitch_deg,
                elevation_m,
            }
        })
        .collect();
    DoorBottomProfile {
        property_id: mask.property_id.clone(),
        model_id: mask.model_id.clone(),
        points,
    }
}

/// Estimates the LFE of `property_id` from its masks on `asset`.
///
/// Masks for other properties or panoramas, and masks that do not fit the
/// panorama, are ignored. Failures are reported through the record status.
pub fn estimate_lfe(
    property_id: &str,
    asset: &PanoAsset,
    depth: &DepthGrid,
    masks: &[SegMask],
    cfg: &ExtractionConfig,
) -> LfeRecord {
    estimate_lfe_with_profile(property_id, asset, depth, masks, cfg).0
}

pub fn estimate_lfe_with_profile(
    property_id: &str,
    asset: &PanoAsset,
    depth: &DepthGrid,
    masks: &[SegMask],
    cfg: &ExtractionConfig,
) -> (LfeRecord, Option<DoorBottomProfile>) {
    let record = |status, lfe_m, n_points_used| LfeRecord {
        property_id: property_id.to_string(),
        panorama_id: asset.panorama_id.clone(),
        status,
        lfe_m,
        n_points_used,
        camera_elev_m: asset.camera_elev_m,
    };
    let unavailable = |reason, n| record(LfeStatus::Unavailable(reason), None, n);

    let usable = masks.iter().filter(|m| {
        m.property_id == property_id
            && m.panorama_id == asset.panorama_id
            && m.check_bounds(asset.dims.width(), asset.dims.height()).is_ok()
    });
    let Some(mask) = select_mask(usable) else {
        return (unavailable(UnavailableReason::NoMask, 0), None);
    };

    let profile = door_bottom_profile(asset, depth, mask);
    if profile.points.len() < cfg.min_points {
        let n = profile.points.len();
        return (unavailable(UnavailableReason::NoDoorBottom, n), Some(profile));
    }
    let finite = profile.finite_elevations();
    if finite.len() < cfg.min_points {
        return (unavailable(UnavailableReason::DepthMissing, finite.len()), Some(profile));
    }
    let retained = filter_outliers(&finite, cfg);
    if retained.len() < cfg.min_points {
        return (unavailable(UnavailableReason::DepthMissing, retained.len()), Some(profile));
    }
    let lfe = median(&retained).expect("non-empty");
    (record(LfeStatus::Available, Some(lfe), retained.len()), Some(profile))
}
