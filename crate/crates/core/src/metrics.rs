//! Evaluation metrics: pixel IoU, VOC-style interpolated AP50, MAE and
//! availability.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maskio::BitMask;

/// IoU a detection must reach to count as a true positive.
pub const AP_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("masks differ in size: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("no values to aggregate")]
    EmptyInput,
    #[error("availability over zero properties")]
    ZeroTotal,
    #[error("{available} available exceeds {total} total")]
    AvailableExceedsTotal { available: usize, total: usize },
}

/// Pixel counts of a predicted mask against a ground-truth mask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_bitmaps(pred: &BitMask, gt: &BitMask) -> Result<Self, MetricsError> {
        if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
            return Err(MetricsError::DimensionMismatch(pred.width(), pred.height(), gt.width(), gt.height()));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        Ok(c)
    }

    pub fn from_pixel_sets(pred: &PixelSet, gt: &PixelSet) -> Self {
        let tp = pred.0.intersection(&gt.0).count() as u64;
        ConfusionCounts {
            tp,
            fp: pred.0.len() as u64 - tp,
            fn_: gt.0.len() as u64 - tp,
        }
    }

    pub fn add(&mut self, other: ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// Intersection over union as a fraction; both-empty counts as 1.
    pub fn iou_fraction(&self) -> f64 {
        let union = self.tp + self.fp + self.fn_;
        if union == 0 {
            1.0
        } else {
            self.tp as f64 / union as f64
        }
    }

    pub fn iou_pct(&self) -> f64 {
        100.0 * self.iou_fraction()
    }
}

/// Pixel IoU in percent of two same-size masks.
pub fn iou(pred: &BitMask, gt: &BitMask) -> Result<f64, MetricsError> {
    Ok(ConfusionCounts::from_bitmaps(pred, gt)?.iou_pct())
}

/// A sparse set of panorama pixels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PixelSet(pub HashSet<(u32, u32)>);

impl FromIterator<(u32, u32)> for PixelSet {
    fn from_iter<T: IntoIterator<Item = (u32, u32)>>(iter: T) -> Self {
        PixelSet(iter.into_iter().collect())
    }
}

/// Axis-aligned box `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }
}

/// Regions that detections and ground truths can be compared by.
pub trait Overlap {
    /// IoU as a fraction in `[0, 1]`.
    fn iou_with(&self, other: &Self) -> f64;
}

impl Overlap for PixelSet {
    fn iou_with(&self, other: &Self) -> f64 {
        ConfusionCounts::from_pixel_sets(self, other).iou_fraction()
    }
}

impl Overlap for BBox {
    fn iou_with(&self, other: &Self) -> f64 {
        let inter = BBox {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        }
        .area();
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection<R> {
    pub image_id: String,
    pub score: f64,
    pub region: R,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<R> {
    pub image_id: String,
    pub region: R,
}

/// True-positive flag per detection, in descending score order (stable for
/// ties), after greedy matching at `threshold`.
pub fn match_detections<R: Overlap>(
    detections: &[Detection<R>],
    ground_truths: &[GroundTruth<R>],
    threshold: f64,
) -> Vec<bool> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));
    let mut matched = vec![false; ground_truths.len()];
    order
        .into_iter()
        .map(|di| {
            let det = &detections[di];
            let best = ground_truths
                .iter()
                .enumerate()
                .filter(|(gi, gt)| !matched[*gi] && gt.image_id == det.image_id)
                .map(|(gi, gt)| (gi, det.region.iou_with(&gt.region)))
                .fold(None, |best: Option<(usize, f64)>, (gi, v)| match best {
                    Some((_, bv)) if bv >= v => best,
                    _ => Some((gi, v)),
                });
            match best {
                Some((gi, v)) if v >= threshold => {
                    matched[gi] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

/// One point of a precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    /// Highest precision at any recall at least this one.
    pub interpolated: f64,
}

/// Precision-recall curve of ranked true-positive flags.
pub fn pr_curve(tp_flags: &[bool], n_gt: usize) -> Vec<PrPoint> {
    let mut tp = 0usize;
    let mut curve: Vec<PrPoint> = tp_flags
        .iter()
        .enumerate()
        .map(|(k, &hit)| {
            tp += usize::from(hit);
            let precision = tp as f64 / (k + 1) as f64;
            PrPoint {
                recall: if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 },
                precision,
                interpolated: precision,
            }
        })
        .collect();
    let mut best = 0.0f64;
    for p in curve.iter_mut().rev() {
        best = best.max(p.precision);
        p.interpolated = best;
    }
    curve
}

/// All-point interpolated AP from ranked true-positive flags, as a fraction.
pub fn interpolated_ap(tp_flags: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if tp_flags.is_empty() { 1.0 } else { 0.0 };
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for p in pr_curve(tp_flags, n_gt) {
        if p.recall > prev_recall {
            ap += (p.recall - prev_recall) * p.interpolated;
            prev_recall = p.recall;
        }
    }
    ap
}

/// AP at IoU 50%, in percent.
pub fn ap50<R: Overlap>(detections: &[Detection<R>], ground_truths: &[GroundTruth<R>]) -> f64 {
    let flags = match_detections(detections, ground_truths, AP_IOU_THRESHOLD);
    100.0 * interpolated_ap(&flags, ground_truths.len())
}

/// Mean absolute error of `(estimate, truth)` pairs.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(pairs.iter().map(|(e, t)| (e - t).abs()).sum::<f64>() / pairs.len() as f64)
}

pub fn availability(n_available: usize, n_total: usize) -> Result<f64, MetricsError> {
    if n_total == 0 {
        return Err(MetricsError::ZeroTotal);
    }
    if n_available > n_total {
        return Err(MetricsError::AvailableExceedsTotal {
            available: n_available,
            total: n_total,
        });
    }
    Ok(100.0 * n_available as f64 / n_total as f64)
}

/// Images per second of wall-clock time.
pub fn fps(n_images: usize, elapsed_s: f64) -> Option<f64> {
    (elapsed_s > 0.0).then(|| n_images as f64 / elapsed_s)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_pct: Option<f64>,
    pub ap50_pct: Option<f64>,
    pub mae_m: Option<f64>,
    pub availability_pct: Option<f64>,
    pub availability_visible_pct: Option<f64>,
    pub fps: Option<f64>,
}

impl EvalReport {
    /// Aligned plain-text table of the populated columns.
    pub fn to_table(&self, model: &str) -> String {
        let cols: Vec<(&str, String)> = [
            ("IoU (%)", self.iou_pct, 2),
            ("AP50 (%)", self.ap50_pct, 2),
            ("FPS", self.fps, 2),
            ("MAE (m)", self.mae_m, 2),
            ("Availability (%)", self.availability_pct, 2),
            ("Availability in the houses with visible front doors (%)", self.availability_visible_pct, 2),
        ]
        .into_iter()
        .filter_map(|(name, v, prec)| v.map(|v| (name, format!("{v:.prec$}"))))
        .collect();
        let model_w = model.len().max("Model".len());
        let widths: Vec<usize> = cols.iter().map(|(n, v)| n.len().max(v.len())).collect();
        let mut header = format!("{:<model_w$}", "Model");
        let mut row = format!("{model:<model_w$}");
        for ((name, value), w) in cols.iter().zip(&widths) {
            let _ = write!(header, "  {name:>w$}");
            let _ = write!(row, "  {value:>w$}");
        }
        let rule = "-".repeat(header.len());
        format!("{rule}\n{header}\n{rule}\n{row}\n{rule}\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block(w: u32, h: u32, x0: u32, y0: u32, bw: u32, bh: u32) -> BitMask {
        BitMask::from_fn(w, h, |c, r| (x0..x0 + bw).contains(&c) && (y0..y0 + bh).contains(&r))
    }

    #[test]
    fn iou_examples() {
        let a = block(8, 8, 1, 1, 3, 3);
        assert_eq!(iou(&a, &a).unwrap(), 100.0);
        assert_eq!(iou(&a, &block(8, 8, 5, 5, 2, 2)).unwrap(), 0.0);
        let p = block(4, 4, 0, 0, 2, 2);
        let g = block(4, 4, 0, 1, 2, 2);
        assert!((iou(&p, &g).unwrap() - 100.0 * 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(iou(&BitMask::new(3, 3), &BitMask::new(3, 3)).unwrap(), 100.0);
        assert_eq!(iou(&BitMask::new(3, 3), &block(3, 3, 0, 0, 1, 1)).unwrap(), 0.0);
        assert!(matches!(iou(&BitMask::new(3, 3), &BitMask::new(3, 4)), Err(MetricsError::DimensionMismatch(..))));
    }

    fn bx(x0: f64, x1: f64) -> BBox {
        BBox { x0, y0: 0.0, x1, y1: 1.0 }
    }

    fn det(image: &str, score: f64, region: BBox) -> Detection<BBox> {
        Detection {
            image_id: image.into(),
            score,
            region,
        }
    }

    fn gt(image: &str, region: BBox) -> GroundTruth<BBox> {
        GroundTruth {
            image_id: image.into(),
            region,
        }
    }

    #[test]
    fn ap_single_detection() {
        // Overlap 0.6 of a unit-height box against [0, 1): IoU 0.6.
        let g = [gt("a", bx(0.0, 1.0))];
        assert_eq!(ap50(&[det("a", 0.9, bx(0.0, 0.6))], &g), 100.0);
        assert_eq!(ap50(&[det("a", 0.9, bx(0.0, 0.4))], &g), 0.0);
    }

    #[test]
    fn ap_three_detections_two_truths() {
        let g = [gt("a", bx(0.0, 1.0)), gt("b", bx(0.0, 1.0))];
        let d = [
            det("a", 0.9, bx(0.0, 1.0)),
            det("a", 0.8, bx(5.0, 6.0)),
            det("b", 0.7, bx(0.0, 0.9)),
        ];
        assert_eq!(match_detections(&d, &g, 0.5), vec![true, false, true]);
        let ap = ap50(&d, &g);
        assert!((ap - 100.0 * (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-9, "{ap}");
        assert!((ap - 83.33).abs() < 0.005);
    }

    #[test]
    fn ap_edge_cases() {
        let none: [Detection<BBox>; 0] = [];
        assert_eq!(ap50(&none, &[]), 100.0);
        assert_eq!(ap50(&[det("a", 0.5, bx(0.0, 1.0))], &[]), 0.0);
        assert_eq!(ap50(&none, &[gt("a", bx(0.0, 1.0))]), 0.0);
        // A detection on another image never matches.
        assert_eq!(ap50(&[det("b", 0.5, bx(0.0, 1.0))], &[gt("a", bx(0.0, 1.0))]), 0.0);
        // Each truth is matched only once.
        let two = [det("a", 0.9, bx(0.0, 1.0)), det("a", 0.8, bx(0.0, 1.0))];
        assert_eq!(match_detections(&two, &[gt("a", bx(0.0, 1.0))], 0.5), vec![true, false]);
    }

    #[test]
    fn mae_and_availability_examples() {
        assert_eq!(mae(&[(1.0, 1.0)]).unwrap(), 0.0);
        assert!((mae(&[(1.0, 1.5), (2.0, 1.0)]).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(mae(&[]), Err(MetricsError::EmptyInput));
        assert_eq!(format!("{:.2}", availability(229, 409).unwrap()), "55.99");
        assert_eq!(format!("{:.2}", availability(229, 232).unwrap()), "98.71");
        assert_eq!(availability(0, 10).unwrap(), 0.0);
        assert_eq!(availability(1, 0), Err(MetricsError::ZeroTotal));
    }

    #[test]
    fn table_lists_populated_columns() {
        let report = EvalReport {
            mae_m: Some(0.2213),
            availability_pct: Some(55.99022),
            availability_visible_pct: Some(98.7069),
            ..Default::default()
        };
        let table = report.to_table("lfe");
        assert!(table.contains("MAE (m)") && table.contains("0.22"));
        assert!(table.contains("55.99") && table.contains("98.71"));
        assert!(!table.contains("IoU"));
    }

    proptest! {
        #[test]
        fn iou_symmetric(bits_a in prop::collection::vec(any::<bool>(), 64), bits_b in prop::collection::vec(any::<bool>(), 64)) {
            let a = BitMask::from_bits(8, 8, bits_a).unwrap();
            let b = BitMask::from_bits(8, 8, bits_b).unwrap();
            prop_assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
            if a.count_ones() > 0 {
                prop_assert_eq!(iou(&a, &a).unwrap(), 100.0);
            }
        }

        #[test]
        fn ap_invariant_under_monotone_rescaling(
            raw in prop::collection::vec((0usize..3, 0.0f64..1.0, 0.0f64..2.0), 0..6),
            gts in prop::collection::vec((0usize..3, 0.0f64..2.0), 0..4),
        ) {
            let dets: Vec<_> = raw.iter().map(|&(img, s, x)| det(&img.to_string(), s, bx(x, x + 1.0))).collect();
            let gts: Vec<_> = gts.iter().map(|&(img, x)| gt(&img.to_string(), bx(x, x + 1.0))).collect();
            let rescaled: Vec<_> = dets.iter().map(|d| Detection { score: (3.0 * d.score).exp(), ..d.clone() }).collect();
            prop_assert_eq!(ap50(&dets, &gts), ap50(&rescaled, &gts));
        }

        #[test]
        fn interpolated_precision_non_increasing(flags in prop::collection::vec(any::<bool>(), 0..30), extra in 0usize..5) {
            let n_gt = flags.iter().filter(|f| **f).count() + extra;
            let curve = pr_curve(&flags, n_gt);
            for w in curve.windows(2) {
                prop_assert!(w[0].recall <= w[1].recall);
                prop_assert!(w[0].interpolated >= w[1].interpolated);
            }
        }

        #[test]
        fn all_true_positives_give_full_ap(n in 1usize..6) {
            let gts: Vec<_> = (0..n).map(|i| gt(&i.to_string(), bx(0.0, 1.0))).collect();
            let dets: Vec<_> = (0..n).map(|i| det(&i.to_string(), 0.1 * i as f64, bx(0.0, 1.0))).collect();
            prop_assert!((ap50(&dets, &gts) - 100.0).abs() < 1e-9);
        }

        #[test]
        fn mae_translation_invariant(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..20), c in -100.0f64..100.0) {
            let shifted: Vec<_> = pairs.iter().map(|(e, t)| (e + c, t + c)).collect();
            prop_assert!((mae(&pairs).unwrap() - mae(&shifted).unwrap()).abs() < 1e-9);
        }
    }
}
