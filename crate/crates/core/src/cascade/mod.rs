//! The two-tier pipeline: threshold -> size/aspect filter -> NMS -> classify
//! -> per-ROI case assignment.

mod calibrate;
mod store;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    extract_patch, ClassLabel, CorpusManifest, DeviceType, QualityGrade, Radiograph, View, NUM_CLASSES,
};
use crate::error::{Error, Result};
use crate::geometry::{iou, nms, size_aspect_filter, BoundingBox, ScoredBox, SizeAspectBand};
use crate::models::{argmax, ProposalScorer, RoiClassifier};

pub use calibrate::{
    calibrate_from_candidates, calibrate_threshold, default_grid, CalibrationImage, CalibrationResult, GridPoint,
};
pub use store::{DiskImageStore, ImageStore};

/// Fixed tier-1 geometry parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeParams {
    pub band: SizeAspectBand,
    /// NMS suppresses overlaps strictly above this IoU.
    pub nms_iou: f64,
    /// Detections count at IoU at or above this.
    pub match_iou: f64,
}

impl Default for CascadeParams {
    fn default() -> Self {
        CascadeParams { band: SizeAspectBand::default(), nms_iou: 0.4, match_iou: 0.5 }
    }
}

impl CascadeParams {
    pub fn validate(&self) -> Result<()> {
        self.band.validate()?;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if unit(self.nms_iou) && unit(self.match_iou) && self.match_iou > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid cascade params {self:?}")))
        }
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(Error::invalid(format!("threshold {threshold} outside [0, 1]")))
    }
}

/// Tier 1 applied to raw scorer output.
pub fn tier1_from_scores(raw: &[ScoredBox], threshold: f64, params: &CascadeParams) -> Result<Vec<ScoredBox>> {
    check_threshold(threshold)?;
    let kept: Vec<ScoredBox> = raw.iter().filter(|b| b.score >= threshold).cloned().collect();
    Ok(nms(&size_aspect_filter(&kept, &params.band), params.nms_iou))
}

pub fn tier1_detect(
    image: &Radiograph,
    scorer: &dyn ProposalScorer,
    threshold: f64,
    params: &CascadeParams,
) -> Result<Vec<ScoredBox>> {
    check_threshold(threshold)?;
    tier1_from_scores(&scorer.score(image)?, threshold, params)
}

/// Restricts a threshold-0 tier-1 output to `threshold`.
///
/// Because the filter does not depend on the threshold and greedy NMS only
/// lets a box be suppressed by higher-scoring ones, this equals running
/// tier 1 at `threshold` directly.
pub fn restrict(candidates: &[ScoredBox], threshold: f64) -> Vec<ScoredBox> {
    candidates.iter().filter(|b| b.score >= threshold).cloned().collect()
}

/// A tier-1 box after classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedGbb {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
    /// Nine device types followed by background.
    pub class_scores: Vec<f64>,
    pub label: ClassLabel,
}

impl ClassifiedGbb {
    pub fn suppressed(&self) -> bool {
        self.label == ClassLabel::Background
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tier2Result {
    pub gbbs: Vec<ClassifiedGbb>,
    pub labeled: usize,
    pub suppressed: usize,
}

/// Argmax label; ties go to the lower class index.
pub fn label_from_scores(scores: &[f64; NUM_CLASSES]) -> ClassLabel {
    ClassLabel::from_index(argmax(scores)).expect("index within class range")
}

pub fn classify_gbbs(gbbs: &[ScoredBox], scores: &[[f64; NUM_CLASSES]]) -> Tier2Result {
    let gbbs: Vec<ClassifiedGbb> = gbbs
        .iter()
        .zip(scores)
        .map(|(g, s)| ClassifiedGbb {
            bbox: g.bbox,
            score: g.score,
            class_scores: s.to_vec(),
            label: label_from_scores(s),
        })
        .collect();
    let suppressed = gbbs.iter().filter(|g| g.suppressed()).count();
    Tier2Result { labeled: gbbs.len() - suppressed, suppressed, gbbs }
}

/// Classifies each tier-1 box; background-labelled boxes are kept in the
/// result but flagged suppressed.
pub fn tier2_classify(gbbs: &[ScoredBox], classifier: &dyn RoiClassifier, image: &Radiograph) -> Result<Tier2Result> {
    let patches = gbbs
        .iter()
        .map(|g| extract_patch(image, &g.bbox, classifier.patch_size()))
        .collect::<Result<Vec<_>>>()?;
    let scores = if patches.is_empty() { Vec::new() } else { classifier.classify_batch(&patches)? };
    for s in &scores {
        if s.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("classifier produced a score outside [0, 1]"));
        }
    }
    Ok(classify_gbbs(gbbs, &scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum CaseAssignment {
    Assigned { device_type: DeviceType, gbb: usize, iou: f64 },
    /// Only background-labelled boxes overlap the ROI.
    UnlabeledDetection { gbb: usize, iou: f64 },
    Undetected,
}

impl CaseAssignment {
    pub fn device_type(&self) -> Option<DeviceType> {
        match self {
            CaseAssignment::Assigned { device_type, .. } => Some(*device_type),
            _ => None,
        }
    }
}

/// Greatest-IoU (at least `iou_min`) labelled box decides the ROI's type;
/// ties go to the lower box index.
pub fn assign_case_type(gbbs: &[ClassifiedGbb], roi: &BoundingBox, iou_min: f64) -> CaseAssignment {
    let best = |want_suppressed: bool| {
        let mut best: Option<(usize, f64)> = None;
        for (i, g) in gbbs.iter().enumerate() {
            if g.suppressed() != want_suppressed {
                continue;
            }
            let v = iou(&g.bbox, roi);
            if v >= iou_min && best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best
    };
    if let Some((i, v)) = best(false) {
        let ClassLabel::Device(t) = gbbs[i].label else { unreachable!() };
        return CaseAssignment::Assigned { device_type: t, gbb: i, iou: v };
    }
    match best(true) {
        Some((i, v)) => CaseAssignment::UnlabeledDetection { gbb: i, iou: v },
        None => CaseAssignment::Undetected,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiOutcome {
    pub roi_id: String,
    pub device_type: DeviceType,
    pub grade: QualityGrade,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub assignment: CaseAssignment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageOutput {
    pub image_id: String,
    /// Ground-truth boxes scored against, in manifest order.
    pub rois: Vec<RoiOutcome>,
    /// Tier-2 view of every tier-1 box (same order as tier 1).
    pub gbbs: Vec<ClassifiedGbb>,
    pub labeled: usize,
    pub suppressed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeOutput {
    pub threshold: f64,
    pub params: CascadeParams,
    /// Sorted by image id.
    pub images: Vec<ImageOutput>,
}

impl CascadeOutput {
    pub fn tier1_gbbs(&self, image: &ImageOutput) -> Vec<ScoredBox> {
        image
            .gbbs
            .iter()
            .map(|g| ScoredBox { bbox: g.bbox, score: g.score, class_scores: None })
            .collect()
    }

    pub fn roi_count(&self) -> usize {
        self.images.iter().map(|i| i.rois.len()).sum()
    }
}

/// Cascade over one image given its threshold-0 tier-1 candidates.
pub fn cascade_image(
    image_id: &str,
    image: &Radiograph,
    rois: &[RoiOutcome],
    tier1: &[ScoredBox],
    classifier: &dyn RoiClassifier,
    params: &CascadeParams,
) -> Result<ImageOutput> {
    let t2 = tier2_classify(tier1, classifier, image)?;
    let rois = rois
        .iter()
        .map(|r| RoiOutcome { assignment: assign_case_type(&t2.gbbs, &r.bbox, params.match_iou), ..r.clone() })
        .collect();
    Ok(ImageOutput {
        image_id: image_id.to_string(),
        rois,
        gbbs: t2.gbbs,
        labeled: t2.labeled,
        suppressed: t2.suppressed,
    })
}

/// Runs both tiers over `image_ids` (frontal images), scoring against their
/// frontal ROIs. Images are processed in parallel and emitted sorted by id.
pub fn run_cascade(
    manifest: &CorpusManifest,
    image_ids: &[String],
    store: &dyn ImageStore,
    scorer: &dyn ProposalScorer,
    classifier: &dyn RoiClassifier,
    threshold: f64,
    params: &CascadeParams,
) -> Result<CascadeOutput> {
    use rayon::prelude::*;
    check_threshold(threshold)?;
    params.validate()?;
    let index = manifest.index();
    let mut ids: Vec<&String> = image_ids.iter().collect();
    ids.sort();
    ids.dedup();
    let images = ids
        .par_iter()
        .map(|id| {
            let record = index
                .image(id)
                .ok_or_else(|| Error::invalid(format!("unknown image {id}")))?;
            let image = store.load(record)?;
            let rois: Vec<RoiOutcome> = index
                .rois_of_image(id)
                .iter()
                .filter(|r| r.view == View::Frontal)
                .map(|r| RoiOutcome {
                    roi_id: r.roi_id.clone(),
                    device_type: r.device_type,
                    grade: r.grade,
                    bbox: r.bbox,
                    assignment: CaseAssignment::Undetected,
                })
                .collect();
            let tier1 = tier1_detect(&image, scorer, threshold, params)?;
            cascade_image(id, &image, &rois, &tier1, classifier, params)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CascadeOutput { threshold, params: *params, images })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn scores_for(label: usize) -> [f64; NUM_CLASSES] {
        let mut s = [0.1; NUM_CLASSES];
        s[label] = 0.9;
        s
    }

    fn classified(b: BoundingBox, label: usize) -> ClassifiedGbb {
        let s = scores_for(label);
        ClassifiedGbb { bbox: b, score: 0.5, class_scores: s.to_vec(), label: label_from_scores(&s) }
    }

    #[test]
    fn greatest_iou_label_wins() {
        let roi = bx(0.0, 0.0, 10.0, 10.0);
        // IoU 0.8 and 0.6
        let a = classified(bx(0.0, 0.0, 10.0, 8.0), DeviceType::Llp2.index());
        let b = classified(bx(0.0, 0.0, 10.0, 6.0), DeviceType::Llr3.index());
        assert_eq!(assign_case_type(&[b.clone(), a.clone()], &roi, 0.5).device_type(), Some(DeviceType::Llp2));
        assert_eq!(assign_case_type(&[], &roi, 0.5), CaseAssignment::Undetected);
    }

    #[test]
    fn iou_ties_go_to_lower_index() {
        let roi = bx(0.0, 0.0, 10.0, 10.0);
        let a = classified(bx(0.0, 0.0, 10.0, 7.0), DeviceType::Erc1.index());
        let b = classified(bx(0.0, 3.0, 10.0, 10.0), DeviceType::Llr1.index());
        assert_eq!(assign_case_type(&[a.clone(), b.clone()], &roi, 0.5).device_type(), Some(DeviceType::Erc1));
        assert_eq!(assign_case_type(&[b, a], &roi, 0.5).device_type(), Some(DeviceType::Llr1));
    }

    #[test]
    fn suppressed_only_overlap_is_unlabeled() {
        let roi = bx(0.0, 0.0, 10.0, 10.0);
        let bg = classified(bx(0.0, 0.0, 10.0, 9.0), 9);
        let far = classified(bx(50.0, 50.0, 60.0, 60.0), 0);
        assert!(matches!(
            assign_case_type(&[far, bg], &roi, 0.5),
            CaseAssignment::UnlabeledDetection { gbb: 1, .. }
        ));
    }

    #[test]
    fn labels_by_argmax_and_accounting_identity() {
        let g = |x: f64| ScoredBox::new(bx(x, 0.0, x + 20.0, 20.0), 0.3).unwrap();
        let gbbs = [g(0.0), g(30.0), g(60.0)];
        let mut s0 = [0.2; NUM_CLASSES];
        s0[4] = 0.7;
        let mut s1 = [0.2; NUM_CLASSES];
        s1[9] = 0.95;
        s1[0] = 0.9;
        let mut s2 = [0.2; NUM_CLASSES];
        s2[8] = 0.6;
        s2[9] = 0.6;
        let r = classify_gbbs(&gbbs, &[s0, s1, s2]);
        let labels: Vec<ClassLabel> = r.gbbs.iter().map(|g| g.label).collect();
        assert_eq!(
            labels,
            vec![
                ClassLabel::Device(DeviceType::Llr3),
                ClassLabel::Background,
                ClassLabel::Device(DeviceType::Erc1)
            ]
        );
        assert_eq!((r.labeled, r.suppressed), (2, 1));
        assert_eq!(r.labeled + r.suppressed, gbbs.len());
    }

    #[test]
    fn tier1_composes_threshold_filter_nms() {
        let sb = |b: BoundingBox, s: f64| ScoredBox::new(b, s).unwrap();
        let raw = vec![
            sb(bx(0.0, 0.0, 30.0, 30.0), 0.9),
            // IoU with the first = 0.6 -> suppressed
            sb(bx(0.0, 0.0, 30.0, 18.0 + 0.0), 0.8),
            // too small for the band
            sb(bx(100.0, 100.0, 110.0, 110.0), 0.95),
            sb(bx(200.0, 0.0, 240.0, 40.0), 0.05),
        ];
        let p = CascadeParams::default();
        let out = tier1_from_scores(&raw, 0.1, &p).unwrap();
        assert_eq!(out, vec![raw[0].clone()]);
        let all = tier1_from_scores(&raw, 0.0, &p).unwrap();
        assert_eq!(all, vec![raw[0].clone(), raw[3].clone()]);
        assert_eq!(restrict(&all, 0.1), out);
        assert!(tier1_from_scores(&raw, 1.0, &p).unwrap().is_empty());
        assert!(tier1_from_scores(&raw, 1.5, &p).is_err());
    }
}
