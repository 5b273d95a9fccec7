use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{pr_curve, precision_recall_counts, ratio_or_one, roc_auc_per_type, PrCurve, RocCurve};
use crate::cascade::{restrict, CascadeOutput, CaseAssignment};
use crate::corpus::{DeviceType, MriSafety, QualityGrade};
use crate::error::{Error, Result};
use crate::geometry::match_detections;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tier1Row {
    pub threshold: f64,
    pub total_gbbs: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub sensitivity: f64,
    pub gbbs_per_detected_roi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Tier2Report {
    pub total_gbbs: usize,
    pub labeled: usize,
    pub suppressed: usize,
    /// Labelled boxes chosen for some ROI whose label is that ROI's type.
    pub correct: usize,
    pub incorrect: usize,
    /// Labelled boxes not chosen for any ROI (tier-2 false positives).
    pub unmatched: usize,
    pub roi_count: usize,
    /// ROIs resolved to a device type, right or wrong.
    pub detected_rois: usize,
    pub correct_rois: usize,
    pub unlabeled_rois: usize,
    pub undetected_rois: usize,
    pub detection_precision: f64,
    pub detection_sensitivity: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "device_type")]
pub enum Prediction {
    Type(DeviceType),
    Unlabeled,
    Undetected,
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prediction::Type(t) => write!(f, "{t}"),
            Prediction::Unlabeled => f.write_str("unlabeled"),
            Prediction::Undetected => f.write_str("undetected"),
        }
    }
}

/// One ROI the cascade did not type correctly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub image_id: String,
    pub roi_id: String,
    pub true_type: DeviceType,
    pub predicted: Prediction,
    pub grade: QualityGrade,
    pub true_safety: MriSafety,
    pub predicted_safety: Option<MriSafety>,
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeAuc {
    pub device_type: DeviceType,
    pub positives: usize,
    pub negatives: usize,
    /// `None` when the type has no positives or no negatives.
    pub auc: Option<f64>,
    pub mri_safety: MriSafety,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierReport {
    pub cascade_threshold: f64,
    pub tier1: Vec<Tier1Row>,
    pub tier2: Tier2Report,
    pub pr_curve: Option<PrCurve>,
    pub ap_interpolation: String,
    pub type_auc: Vec<TypeAuc>,
    pub roc_curves: Vec<RocCurve>,
    pub audit: Vec<AuditRow>,
}

/// Builds both tier tables from a cascade run. `tier1_thresholds` may not go
/// below the threshold the cascade ran at, since lower-scoring boxes were
/// never kept.
pub fn build_reports(output: &CascadeOutput, tier1_thresholds: &[f64]) -> Result<TierReport> {
    let iou_min = output.params.match_iou;
    let mut tier1 = Vec::with_capacity(tier1_thresholds.len());
    for &t in tier1_thresholds {
        if !(t >= output.threshold) {
            return Err(Error::invalid(format!(
                "tier-1 row at {t} is below the cascade threshold {}",
                output.threshold
            )));
        }
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for img in &output.images {
            let rois: Vec<_> = img.rois.iter().map(|r| r.bbox).collect();
            let m = match_detections(&restrict(&output.tier1_gbbs(img), t), &rois, iou_min);
            tp += m.tp_count;
            fp += m.fp_count;
            fn_ += m.fn_count;
        }
        let (precision, sensitivity) = precision_recall_counts(tp, fp, fn_);
        tier1.push(Tier1Row {
            threshold: t,
            total_gbbs: tp + fp,
            tp,
            fp,
            fn_,
            precision,
            sensitivity,
            gbbs_per_detected_roi: (tp > 0).then(|| (tp + fp) as f64 / tp as f64),
        });
    }

    let mut t2 = Tier2Report::default();
    let mut pr_input = Vec::new();
    let mut auc_samples: Vec<(DeviceType, Vec<f64>)> = Vec::new();
    let mut audit = Vec::new();
    for img in &output.images {
        t2.total_gbbs += img.gbbs.len();
        t2.labeled += img.labeled;
        t2.suppressed += img.suppressed;

        let rois: Vec<_> = img.rois.iter().map(|r| r.bbox).collect();
        let tier1_boxes = output.tier1_gbbs(img);
        let m = match_detections(&tier1_boxes, &rois, iou_min);
        for (g, hit) in tier1_boxes.iter().zip(m.gbb_matched(tier1_boxes.len())) {
            pr_input.push((g.score, hit));
        }

        // first ROI (manifest order) to claim a box decides its correctness
        let mut claimed: BTreeMap<usize, DeviceType> = BTreeMap::new();
        for roi in &img.rois {
            t2.roi_count += 1;
            let (predicted, iou) = match roi.assignment {
                CaseAssignment::Assigned { device_type, gbb, iou } => {
                    claimed.entry(gbb).or_insert(roi.device_type);
                    t2.detected_rois += 1;
                    auc_samples.push((roi.device_type, img.gbbs[gbb].class_scores.clone()));
                    (Prediction::Type(device_type), Some(iou))
                }
                CaseAssignment::UnlabeledDetection { gbb, iou } => {
                    t2.unlabeled_rois += 1;
                    auc_samples.push((roi.device_type, img.gbbs[gbb].class_scores.clone()));
                    (Prediction::Unlabeled, Some(iou))
                }
                CaseAssignment::Undetected => {
                    t2.undetected_rois += 1;
                    (Prediction::Undetected, None)
                }
            };
            if predicted == Prediction::Type(roi.device_type) {
                t2.correct_rois += 1;
                continue;
            }
            audit.push(AuditRow {
                image_id: img.image_id.clone(),
                roi_id: roi.roi_id.clone(),
                true_type: roi.device_type,
                predicted,
                grade: roi.grade,
                true_safety: roi.device_type.entry().worst_safety(),
                predicted_safety: match predicted {
                    Prediction::Type(t) => Some(t.entry().worst_safety()),
                    _ => None,
                },
                iou,
            });
        }
        for (&gbb, &truth) in &claimed {
            match img.gbbs[gbb].label {
                crate::corpus::ClassLabel::Device(t) if t == truth => t2.correct += 1,
                _ => t2.incorrect += 1,
            }
        }
        t2.unmatched += img.labeled - claimed.len();
    }
    t2.detection_precision = ratio_or_one(t2.correct + t2.incorrect, t2.labeled);
    t2.detection_sensitivity = ratio_or_one(t2.detected_rois, t2.roi_count);
    t2.accuracy = ratio_or_one(t2.correct_rois, t2.roi_count);

    let pr = if t2.roi_count > 0 { Some(pr_curve(&pr_input, t2.roi_count)?) } else { None };

    let mut type_auc = Vec::new();
    let mut roc_curves = Vec::new();
    for t in DeviceType::ALL {
        let positives = auc_samples.iter().filter(|s| s.0 == t).count();
        let auc = match roc_auc_per_type(&auc_samples, t) {
            Ok(c) => {
                let a = c.auc;
                roc_curves.push(c);
                Some(a)
            }
            Err(Error::Undefined(_)) => None,
            Err(e) => return Err(e),
        };
        type_auc.push(TypeAuc {
            device_type: t,
            positives,
            negatives: auc_samples.len() - positives,
            auc,
            mri_safety: t.entry().worst_safety(),
        });
    }

    Ok(TierReport {
        cascade_threshold: output.threshold,
        tier1,
        tier2: t2,
        pr_curve: pr,
        ap_interpolation: "step".into(),
        type_auc,
        roc_curves,
        audit,
    })
}

impl Tier2Report {
    /// Table-3 style summary built directly from counts; identities are the
    /// caller's responsibility.
    pub fn from_counts(labeled: usize, suppressed: usize, correct: usize, incorrect: usize, roi_count: usize) -> Self {
        let unmatched = labeled.saturating_sub(correct + incorrect);
        Tier2Report {
            total_gbbs: labeled + suppressed,
            labeled,
            suppressed,
            correct,
            incorrect,
            unmatched,
            roi_count,
            detected_rois: correct + incorrect,
            correct_rois: correct,
            unlabeled_rois: 0,
            undetected_rois: roi_count.saturating_sub(correct + incorrect),
            detection_precision: ratio_or_one(correct + incorrect, labeled),
            detection_sensitivity: ratio_or_one(correct + incorrect, roi_count),
            accuracy: ratio_or_one(correct, roi_count),
        }
    }

    /// Checks the accounting identities.
    pub fn identities_hold(&self) -> bool {
        self.labeled + self.suppressed == self.total_gbbs
            && self.correct + self.incorrect + self.unmatched == self.labeled
            && self.detected_rois + self.unlabeled_rois + self.undetected_rois == self.roi_count
    }
}

impl Tier1Row {
    pub fn identities_hold(&self, roi_count: usize) -> bool {
        self.tp + self.fp == self.total_gbbs && self.tp + self.fn_ == roi_count
    }
}
