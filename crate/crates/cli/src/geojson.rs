//! Result GeoJSON: written by hand so the bytes depend only on the inputs.

use std::fmt::Write;

use anyhow::{anyhow, bail, Context, Result};
use lfe_core::{LfeRecord, LfeStatus, Parcel, UnavailableReason};
use serde_json::Value;

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

/// Meters are written with four decimals.
fn meters(v: f64) -> String {
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

/// One Point feature per parcel, in input order.
pub fn records_to_geojson(rows: &[(Parcel, LfeRecord)]) -> String {
    let mut out = String::from("{\"type\":\"FeatureCollection\",\"features\":[");
    for (i, (parcel, rec)) in rows.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('\n');
        let _ = write!(
            out,
            "{{\"type\":\"Feature\",\"geometry\":{{\"type\":\"Point\",\"coordinates\":[{},{}]}},\"properties\":{{",
            parcel.centroid.lon(),
            parcel.centroid.lat()
        );
        let _ = write!(out, "\"property_id\":{}", json_str(&rec.property_id));
        match rec.status {
            LfeStatus::Available => out.push_str(",\"status\":\"Available\""),
            LfeStatus::Unavailable(reason) => {
                let _ = write!(out, ",\"status\":\"Unavailable\",\"reason\":\"{reason}\"");
            }
        }
        if let Some(lfe) = rec.lfe_m {
            let _ = write!(out, ",\"lfe_m\":{}", meters(lfe));
        }
        let _ = write!(
            out,
            ",\"n_points_used\":{},\"panorama_id\":{},\"camera_elev_m\":{}}}}}",
            rec.n_points_used,
            json_str(&rec.panorama_id),
            meters(rec.camera_elev_m)
        );
    }
    if !rows.is_empty() {
        out.push('\n');
    }
    out.push_str("]}\n");
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub property_id: String,
    pub status: LfeStatus,
    pub lfe_m: Option<f64>,
}

pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>> {
    let root: Value = serde_json::from_str(text).context("predictions are not JSON")?;
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| anyhow!("predictions have no features array"))?;
    features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let props = f
                .get("properties")
                .ok_or_else(|| anyhow!("feature {i} has no properties"))?;
            let property_id = match props.get("property_id") {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Number(n)) => n.to_string(),
                _ => bail!("feature {i} has no property_id"),
            };
            let status = match props.get("status").and_then(Value::as_str) {
                Some("Available") => LfeStatus::Available,
                Some("Unavailable") => {
                    let reason = props.get("reason").and_then(Value::as_str).unwrap_or("NoMask");
                    let reason: UnavailableReason = reason.parse().map_err(|e: String| anyhow!("feature {i}: {e}"))?;
                    LfeStatus::Unavailable(reason)
                }
                other => bail!("feature {i}: bad status {other:?}"),
            };
            let lfe_m = props.get("lfe_m").and_then(Value::as_f64);
            if status.is_available() && lfe_m.is_none() {
                bail!("feature {i} is Available without lfe_m");
            }
            Ok(Prediction {
                property_id,
                status,
                lfe_m,
            })
        })
        .collect()
}
