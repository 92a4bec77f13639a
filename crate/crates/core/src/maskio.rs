//! Mask bundle exchange format.
//!
//! A bundle is a directory holding `manifest.json` and one binary PGM (P5,
//! maxval 255) per mask. Pixel value 255 marks the door, 0 the background.
//! Masks live in crop coordinates; `crop_origin` places the crop's top-left
//! pixel in the panorama, and columns wrap around the seam.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum MaskIoError {
    #[error("no manifest.json in {0}")]
    MissingManifest(PathBuf),
    #[error("manifest {path}: {source}")]
    BadManifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{file}: bitmap is {actual_w}x{actual_h}, manifest says {expected_w}x{expected_h}")]
    DimensionMismatch {
        file: String,
        expected_w: u32,
        expected_h: u32,
        actual_w: u32,
        actual_h: u32,
    },
    #[error("{file}: pixel value {value} is neither 0 nor 255")]
    NonBinaryPixel { file: String, value: u8 },
    #[error("{file}: not a binary PGM: {reason}")]
    BadPgm { file: String, reason: String },
    #[error("mask for {property_id}: {reason}")]
    InvalidMask { property_id: String, reason: String },
    #[error("masks from panorama {found} cannot be written to a bundle for {expected}")]
    MixedPanoramas { expected: String, found: String },
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> MaskIoError + '_ {
    move |source| MaskIoError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

/// Row-major binary image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BitMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Option<Self> {
        (bits.len() == width as usize * height as usize).then_some(Self { width, height, bits })
    }

    /// Builds a mask from a predicate over `(col, row)`.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for row in 0..height {
            for col in 0..width {
                bits.push(f(col, row));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, col: u32, row: u32) -> bool {
        self.bits[row as usize * self.width as usize + col as usize]
    }

    pub fn set(&mut self, col: u32, row: u32, value: bool) {
        let w = self.width as usize;
        self.bits[row as usize * w + col as usize] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Set pixels as `(col, row)`, row-major order.
    pub fn ones(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }
}

/// Top-left corner of a crop in panorama pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CropOrigin {
    pub x: u32,
    pub y: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegMask {
    pub property_id: String,
    pub panorama_id: String,
    pub crop_origin: CropOrigin,
    pub bitmap: BitMask,
    pub score: f64,
    pub prompt: String,
    pub model_id: String,
}

impl SegMask {
    pub fn crop_w(&self) -> u32 {
        self.bitmap.width()
    }

    pub fn crop_h(&self) -> u32 {
        self.bitmap.height()
    }

    pub fn area(&self) -> usize {
        self.bitmap.count_ones()
    }

    /// Panorama pixel of crop pixel `(u, v)` for a panorama `pano_width` wide.
    pub fn to_pano(&self, u: u32, v: u32, pano_width: u32) -> (u32, u32) {
        let x = (u64::from(self.crop_origin.x) + u64::from(u)) % u64::from(pano_width);
        (x as u32, self.crop_origin.y + v)
    }

    /// Panorama pixels of every set bit.
    pub fn pano_pixels(&self, pano_width: u32) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.bitmap.ones().map(move |(u, v)| self.to_pano(u, v, pano_width))
    }

    fn check_intrinsic(&self) -> Result<(), MaskIoError> {
        let invalid = |reason: String| MaskIoError::InvalidMask {
            property_id: self.property_id.clone(),
            reason,
        };
        if !(0.0..=1.0).contains(&self.score) {
            return Err(invalid(format!("score {} outside [0, 1]", self.score)));
        }
        if self.crop_w() == 0 || self.crop_h() == 0 {
            return Err(invalid("empty crop".into()));
        }
        Ok(())
    }

    /// Checks that the crop fits a panorama of `width x height` after the
    /// horizontal wrap.
    pub fn check_bounds(&self, width: u32, height: u32) -> Result<(), MaskIoError> {
        self.check_intrinsic()?;
        let invalid = |reason: String| MaskIoError::InvalidMask {
            property_id: self.property_id.clone(),
            reason,
        };
        if self.crop_origin.x >= width || self.crop_w() > width {
            return Err(invalid(format!(
                "crop x {}..+{} does not wrap into width {width}",
                self.crop_origin.x,
                self.crop_w()
            )));
        }
        if u64::from(self.crop_origin.y) + u64::from(self.crop_h()) > u64::from(height) {
            return Err(invalid(format!(
                "crop rows {}..+{} exceed height {height}",
                self.crop_origin.y,
                self.crop_h()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    panorama_id: String,
    masks: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    property_id: String,
    file: String,
    crop_origin_x: u32,
    crop_origin_y: u32,
    crop_w: u32,
    crop_h: u32,
    score: f64,
    prompt: String,
    model_id: String,
}

/// Reads a P5 PGM with maxval 255 whose pixels are all 0 or 255.
pub fn read_pgm(bytes: &[u8], file: &str) -> Result<BitMask, MaskIoError> {
    let bad = |reason: &str| MaskIoError::BadPgm {
        file: file.to_string(),
        reason: reason.to_string(),
    };
    let mut pos = 0;
    let mut fields = [0u32; 3];
    if bytes.get(..2) != Some(b"P5") {
        return Err(bad("magic is not P5"));
    }
    pos += 2;
    for field in &mut fields {
        // Whitespace and `#` comments may separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?;
        *field = text.parse().map_err(|_| bad("header field is not a number"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing whitespace after maxval"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    let data = &bytes[pos..];
    let n = width as usize * height as usize;
    if data.len() != n {
        return Err(bad(&format!("expected {n} pixel bytes, found {}", data.len())));
    }
    let bits = data
        .iter()
        .map(|&v| match v {
            0 => Ok(false),
            255 => Ok(true),
            value => Err(MaskIoError::NonBinaryPixel {
                file: file.to_string(),
                value,
            }),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BitMask { width, height, bits })
}

pub fn write_pgm(mask: &BitMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.bits.iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// Loads and validates every mask listed in `dir/manifest.json`.
pub fn read_mask_bundle(dir: &Path) -> Result<Vec<SegMask>, MaskIoError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(MaskIoError::MissingManifest(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| MaskIoError::BadManifest {
        path: manifest_path.clone(),
        source,
    })?;
    manifest
        .masks
        .into_iter()
        .map(|entry| {
            let path = dir.join(&entry.file);
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let bitmap = read_pgm(&bytes, &entry.file)?;
            if bitmap.width != entry.crop_w || bitmap.height != entry.crop_h {
                return Err(MaskIoError::DimensionMismatch {
                    file: entry.file,
                    expected_w: entry.crop_w,
                    expected_h: entry.crop_h,
                    actual_w: bitmap.width,
                    actual_h: bitmap.height,
                });
            }
            let mask = SegMask {
                property_id: entry.property_id,
                panorama_id: manifest.panorama_id.clone(),
                crop_origin: CropOrigin {
                    x: entry.crop_origin_x,
                    y: entry.crop_origin_y,
                },
                bitmap,
                score: entry.score,
                prompt: entry.prompt,
                model_id: entry.model_id,
            };
            mask.check_intrinsic()?;
            Ok(mask)
        })
        .collect()
}

/// Writes `masks` as a bundle for `panorama_id` into `dir`, creating it if
/// needed. Bitmap files are named by manifest position.
pub fn write_mask_bundle(dir: &Path, panorama_id: &str, masks: &[SegMask]) -> Result<(), MaskIoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(masks.len());
    for (i, mask) in masks.iter().enumerate() {
        if mask.panorama_id != panorama_id {
            return Err(MaskIoError::MixedPanoramas {
                expected: panorama_id.to_string(),
                found: mask.panorama_id.clone(),
            });
        }
        mask.check_intrinsic()?;
        let file = format!("mask_{i:04}.pgm");
        let path = dir.join(&file);
        fs::write(&path, write_pgm(&mask.bitmap)).map_err(io_err(&path))?;
        entries.push(ManifestEntry {
            property_id: mask.property_id.clone(),
            file,
            crop_origin_x: mask.crop_origin.x,
            crop_origin_y: mask.crop_origin.y,
            crop_w: mask.crop_w(),
            crop_h: mask.crop_h(),
            score: mask.score,
            prompt: mask.prompt.clone(),
            model_id: mask.model_id.clone(),
        });
    }
    let manifest = Manifest {
        panorama_id: panorama_id.to_string(),
        masks: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(io_err(&path))
}
