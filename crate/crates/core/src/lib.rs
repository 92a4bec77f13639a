//! Lowest floor elevation (LFE) estimation from equirectangular street-view
//! panoramas.
//!
//! The pipeline locates a property in a panorama from its bearing, takes the
//! lowest set pixel of every column of a front-door segmentation mask, looks
//! up the radial depth of those pixels and converts depth and pitch into an
//! elevation. The median of the surviving elevations is the LFE.
//!
//! Module map:
//!
//! * [`geocore`]: bearing, azimuth, pixel/angle conversions and ray directions.
//! * [`depthcodec`]: plane-based depth payloads, raw depth grids and sampling.
//! * [`maskio`]: the mask bundle exchange format (JSON manifest + P5 PGM).
//! * [`extraction`]: door-bottom extraction, outlier rejection and the median.
//! * [`ingest`]: tiles, panorama metadata, parcels, viewpoints and crops.
//! * [`metrics`]: IoU, AP50, MAE and availability.
//! * [`synth`]: an analytic ground-plane + facade scene used as an oracle.
//! * [`config`]: pipeline defaults.

pub mod config;
pub mod depthcodec;
pub mod extraction;
pub mod geocore;
pub mod ingest;
pub mod maskio;
pub mod metrics;
pub mod synth;

pub use config::PipelineConfig;
pub use depthcodec::DepthGrid;
pub use extraction::{estimate_lfe, LfeRecord, LfeStatus, UnavailableReason};
pub use geocore::{GeoCoordinate, PanoDims, PixelCoord, SphericalDirection, Vec3};
pub use ingest::{Parcel, PanoAsset};
pub use maskio::SegMask;
