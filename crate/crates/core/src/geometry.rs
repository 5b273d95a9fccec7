//! Axis-aligned box arithmetic in physical millimetres.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in image physical coordinates (mm).
///
/// Construction enforces finite coordinates and strictly positive area, so
/// every `BoundingBox` in circulation is valid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl TryFrom<RawBox> for BoundingBox {
    type Error = Error;

    fn try_from(r: RawBox) -> Result<Self> {
        BoundingBox::new(r.x_min, r.y_min, r.x_max, r.y_max)
    }
}

impl From<BoundingBox> for RawBox {
    fn from(b: BoundingBox) -> Self {
        RawBox {
            x_min: b.x_min,
            y_min: b.y_min,
            x_max: b.x_max,
            y_max: b.y_max,
        }
    }
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite box ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::invalid(format!(
                "degenerate box ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        Ok(BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Box from its top-left corner and size.
    pub fn from_origin_size(x: f64, y: f64, width: f64, height: f64) -> Result<Self> {
        Self::new(x, y, x + width, y + height)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Width over height.
    pub fn aspect(&self) -> f64 {
        self.width() / self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }

    /// Intersection with another box, `None` when interiors are disjoint.
    pub fn intersect(&self, other: &BoundingBox) -> Option<BoundingBox> {
        BoundingBox::new(
            self.x_min.max(other.x_min),
            self.y_min.max(other.y_min),
            self.x_max.min(other.x_max),
            self.y_max.min(other.y_max),
        )
        .ok()
    }

    pub fn scaled(&self, factor: f64) -> Result<BoundingBox> {
        BoundingBox::new(
            self.x_min * factor,
            self.y_min * factor,
            self.x_max * factor,
            self.y_max * factor,
        )
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A detector output box: location, detection probability, and optionally
/// per-class scores (nine device types followed by background).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_scores: Option<Vec<f64>>,
}

impl ScoredBox {
    pub fn new(bbox: BoundingBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::invalid(format!("score {score} outside [0, 1]")));
        }
        Ok(ScoredBox {
            bbox,
            score,
            class_scores: None,
        })
    }
}

/// Tier-1 output-box size/shape band. Bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeAspectBand {
    pub min_dim_mm: f64,
    pub max_dim_mm: f64,
    pub aspect_min: f64,
    pub aspect_max: f64,
}

impl Default for SizeAspectBand {
    fn default() -> Self {
        SizeAspectBand {
            min_dim_mm: 15.0,
            max_dim_mm: 120.0,
            aspect_min: 0.7,
            aspect_max: 1.4,
        }
    }
}

impl SizeAspectBand {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min_dim_mm > 0.0
            && self.min_dim_mm < self.max_dim_mm
            && self.aspect_min > 0.0
            && self.aspect_min <= self.aspect_max;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid size/aspect band {self:?}")))
        }
    }

    pub fn accepts(&self, b: &BoundingBox) -> bool {
        let (w, h) = (b.width(), b.height());
        let dims_ok = [w, h]
            .iter()
            .all(|&d| d >= self.min_dim_mm && d <= self.max_dim_mm);
        let aspect = w / h;
        dims_ok && aspect >= self.aspect_min && aspect <= self.aspect_max
    }
}

/// Keeps the boxes inside `band`, preserving input order.
pub fn size_aspect_filter(boxes: &[ScoredBox], band: &SizeAspectBand) -> Vec<ScoredBox> {
    boxes
        .iter()
        .filter(|b| band.accepts(&b.bbox))
        .cloned()
        .collect()
}

/// Greedy non-maximum suppression; returns indices into `boxes` of the
/// survivors in descending score order. Boxes overlapping an already kept
/// box with IoU strictly greater than `iou_threshold` are dropped. Equal
/// scores are visited in input order.
pub fn nms_indices(boxes: &[ScoredBox], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].score.total_cmp(&boxes[a].score));

    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let candidate = &boxes[i].bbox;
        let suppressed = kept
            .iter()
            .any(|&k| iou(&boxes[k].bbox, candidate) > iou_threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

pub fn nms(boxes: &[ScoredBox], iou_threshold: f64) -> Vec<ScoredBox> {
    nms_indices(boxes, iou_threshold)
        .into_iter()
        .map(|i| boxes[i].clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub roi: usize,
    pub gbb: usize,
    pub iou: f64,
}

/// One-to-one assignment of detections to ground-truth boxes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp_count: usize,
    pub fp_count: usize,
    pub fn_count: usize,
    pub pairs: Vec<MatchPair>,
}

impl MatchResult {
    /// Per-detection flag: `true` when the detection is paired with a ROI.
    pub fn gbb_matched(&self, n_gbbs: usize) -> Vec<bool> {
        let mut flags = vec![false; n_gbbs];
        for p in &self.pairs {
            flags[p.gbb] = true;
        }
        flags
    }

    pub fn roi_matched(&self, n_rois: usize) -> Vec<bool> {
        let mut flags = vec![false; n_rois];
        for p in &self.pairs {
            flags[p.roi] = true;
        }
        flags
    }
}

/// Greedy one-to-one matching by descending IoU over all pairs with
/// `IoU >= iou_min`. Ties go to the lower ROI index, then the lower
/// detection index. Each ROI yields at most one true positive; surplus
/// overlapping detections are false positives.
pub fn match_boxes(gbbs: &[BoundingBox], rois: &[BoundingBox], iou_min: f64) -> MatchResult {
    let mut candidates: Vec<MatchPair> = Vec::new();
    for (r, roi) in rois.iter().enumerate() {
        for (g, gbb) in gbbs.iter().enumerate() {
            let v = iou(roi, gbb);
            if v >= iou_min {
                candidates.push(MatchPair {
                    roi: r,
                    gbb: g,
                    iou: v,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(a.roi.cmp(&b.roi))
            .then(a.gbb.cmp(&b.gbb))
    });

    let mut roi_used = vec![false; rois.len()];
    let mut gbb_used = vec![false; gbbs.len()];
    let mut pairs = Vec::new();
    for c in candidates {
        if roi_used[c.roi] || gbb_used[c.gbb] {
            continue;
        }
        roi_used[c.roi] = true;
        gbb_used[c.gbb] = true;
        pairs.push(c);
    }

    let tp = pairs.len();
    MatchResult {
        tp_count: tp,
        fp_count: gbbs.len() - tp,
        fn_count: rois.len() - tp,
        pairs,
    }
}

pub fn match_detections(gbbs: &[ScoredBox], rois: &[BoundingBox], iou_min: f64) -> MatchResult {
    let boxes: Vec<BoundingBox> = gbbs.iter().map(|g| g.bbox).collect();
    match_boxes(&boxes, rois, iou_min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn sb(b: BoundingBox, s: f64) -> ScoredBox {
        ScoredBox::new(b, s).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 30.0, 30.0)), 0.0);
        // inter 50, union 150
        let v = iou(&a, &bx(5.0, 0.0, 15.0, 10.0));
        assert!((v - 50.0 / 150.0).abs() < 1e-15);
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        assert_eq!(iou(&bx(0.0, 0.0, 1.0, 1.0), &bx(1.0, 0.0, 2.0, 1.0)), 0.0);
    }

    #[test]
    fn degenerate_and_non_finite_boxes_are_rejected() {
        assert!(matches!(
            BoundingBox::new(0.0, 0.0, 0.0, 5.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(BoundingBox::new(0.0, 3.0, 5.0, 3.0).is_err());
        assert!(BoundingBox::new(5.0, 0.0, 1.0, 1.0).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn deserializing_a_degenerate_box_fails() {
        let err = serde_json::from_str::<BoundingBox>(
            r#"{"x_min":1.0,"y_min":1.0,"x_max":1.0,"y_max":2.0}"#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn scored_box_rejects_out_of_range_score() {
        assert!(ScoredBox::new(bx(0.0, 0.0, 1.0, 1.0), 1.5).is_err());
        assert!(ScoredBox::new(bx(0.0, 0.0, 1.0, 1.0), -0.1).is_err());
    }

    #[test]
    fn filter_examples() {
        let band = SizeAspectBand::default();
        let small = sb(bx(0.0, 0.0, 10.0, 10.0), 0.9);
        let square = sb(bx(0.0, 0.0, 50.0, 50.0), 0.9);
        let tall = sb(bx(0.0, 0.0, 30.0, 60.0), 0.9);
        let out = size_aspect_filter(&[small, square.clone(), tall], &band);
        assert_eq!(out, vec![square]);
    }

    #[test]
    fn filter_bounds_are_inclusive() {
        let band = SizeAspectBand::default();
        assert!(band.accepts(&bx(0.0, 0.0, 15.0, 15.0)));
        assert!(band.accepts(&bx(0.0, 0.0, 120.0, 120.0)));
        assert!(band.accepts(&bx(0.0, 0.0, 14.0 * 1.5, 20.0 * 1.5))); // aspect 0.7
        assert!(band.accepts(&bx(0.0, 0.0, 28.0, 20.0))); // aspect 1.4
        assert!(!band.accepts(&bx(0.0, 0.0, 14.99, 15.0)));
        assert!(!band.accepts(&bx(0.0, 0.0, 100.0, 120.01)));
    }

    #[test]
    fn invalid_band_is_a_config_error() {
        let band = SizeAspectBand {
            min_dim_mm: 20.0,
            max_dim_mm: 10.0,
            ..Default::default()
        };
        assert!(matches!(band.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn nms_single_box_is_kept() {
        let a = sb(bx(0.0, 0.0, 20.0, 20.0), 0.3);
        assert_eq!(nms(&[a.clone()], 0.4), vec![a]);
    }

    #[test]
    fn nms_suppresses_above_threshold_only() {
        // inter 200, union 400
        let a = bx(0.0, 0.0, 30.0, 10.0);
        let b = bx(10.0, 0.0, 40.0, 10.0);
        assert!((iou(&a, &b) - 0.5).abs() < 1e-12);
        let out = nms(&[sb(b, 0.8), sb(a, 0.9)], 0.4);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.9);

        // IoU = 0.35 -> both survive, sorted by score
        let c = bx(0.0, 0.0, 27.0, 10.0);
        // shift s: (27 - s) / (27 + s) = 0.35
        let s = 27.0 * 0.65 / 1.35;
        let d = bx(s, 0.0, 27.0 + s, 10.0);
        assert!((iou(&c, &d) - 0.35).abs() < 1e-12);
        let out = nms(&[sb(d, 0.8), sb(c, 0.9)], 0.4);
        assert_eq!(out.iter().map(|b| b.score).collect::<Vec<_>>(), vec![0.9, 0.8]);
    }

    #[test]
    fn nms_ties_prefer_lower_index() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let b = bx(1.0, 0.0, 11.0, 10.0);
        let idx = nms_indices(&[sb(b, 0.5), sb(a, 0.5)], 0.4);
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn matching_examples() {
        let roi = bx(0.0, 0.0, 10.0, 10.0);
        // IoU 0.6 -> shift s with (10-s)/(10+s) = 0.6
        let s = 10.0 * 0.4 / 1.6;
        let g = bx(s, 0.0, 10.0 + s, 10.0);
        let m = match_boxes(&[g], &[roi], 0.5);
        assert_eq!((m.tp_count, m.fp_count, m.fn_count), (1, 0, 0));

        let near = bx(1.0, 1.0, 10.0, 10.0); // IoU 0.81
        let far1 = bx(9.0, 9.0, 19.0, 19.0);
        let far2 = bx(-9.0, -9.0, 1.0, 1.0);
        let m = match_boxes(&[far1, near, far2], &[roi], 0.5);
        assert_eq!((m.tp_count, m.fp_count, m.fn_count), (1, 2, 0));
        assert_eq!(m.pairs[0].gbb, 1);
    }

    #[test]
    fn matching_is_one_to_one() {
        let roi = bx(0.0, 0.0, 10.0, 10.0);
        let g1 = bx(0.0, 0.0, 10.0, 10.0);
        let g2 = bx(0.5, 0.0, 10.5, 10.0);
        let m = match_boxes(&[g2, g1], &[roi], 0.5);
        assert_eq!((m.tp_count, m.fp_count, m.fn_count), (1, 1, 0));
        assert_eq!(m.pairs[0].gbb, 1);
    }

    #[test]
    fn matching_threshold_is_inclusive() {
        let a = bx(0.0, 0.0, 30.0, 10.0);
        let b = bx(10.0, 0.0, 40.0, 10.0);
        let m = match_boxes(&[b], &[a], 0.5);
        assert_eq!(m.tp_count, 1);
    }

    #[test]
    fn paper_table_row_identities() {
        let m = MatchResult {
            tp_count: 878,
            fp_count: 5_359 - 878,
            fn_count: 0,
            pairs: vec![],
        };
        assert_eq!(m.fp_count, 4_481);
        assert_eq!(m.tp_count + m.fp_count, 5_359);
    }

    #[test]
    fn empty_inputs() {
        let m = match_boxes(&[], &[], 0.5);
        assert_eq!(m, MatchResult::default());
        assert!(nms(&[], 0.4).is_empty());
        assert!(size_aspect_filter(&[], &SizeAspectBand::default()).is_empty());
    }
}
