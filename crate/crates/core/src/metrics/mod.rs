//! Detection and classification metrics plus the tier reports built on them.

mod render;
mod report;

pub use render::{audit_csv, pr_csv, roc_csv, svg_plot, tier1_csv, tier2_csv, SvgSeries};
pub use report::{build_reports, AuditRow, Prediction, Tier1Row, Tier2Report, TierReport, TypeAuc};

use serde::{Deserialize, Serialize};

use crate::corpus::DeviceType;
use crate::error::{Error, Result};
use crate::geometry::MatchResult;

/// `num / den`, or 1.0 when the denominator is zero.
pub fn ratio_or_one(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// `(precision, recall)` of a match; empty denominators give 1.0.
pub fn precision_recall(m: &MatchResult) -> (f64, f64) {
    precision_recall_counts(m.tp_count, m.fp_count, m.fn_count)
}

pub fn precision_recall_counts(tp: usize, fp: usize, fn_: usize) -> (f64, f64) {
    (ratio_or_one(tp, tp + fp), ratio_or_one(tp, tp + fn_))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// `(recall, precision)` at each unique score, highest score first.
    pub points: Vec<(f64, f64)>,
    pub average_precision: f64,
}

/// Sweeps `detections` (score, is-true-positive) from the highest score down.
/// `positives` counts all ground-truth objects, including ones never detected,
/// so recall can stop short of 1. AP uses step interpolation.
pub fn pr_curve(detections: &[(f64, bool)], positives: usize) -> Result<PrCurve> {
    if positives == 0 {
        return Err(Error::Undefined("precision-recall curve needs at least one positive".into()));
    }
    let tp_total = detections.iter().filter(|d| d.1).count();
    if tp_total > positives {
        return Err(Error::invalid(format!("{tp_total} true positives but only {positives} positives")));
    }
    if detections.iter().any(|d| !d.0.is_finite()) {
        return Err(Error::invalid("non-finite detection score"));
    }
    let mut sorted = detections.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::new();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push((recall, precision));
    }
    Ok(PrCurve { points, average_precision: ap })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub device_type: Option<DeviceType>,
    /// `(fpr, tpr)` from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC curve over `(score, is_positive)` samples with the trapezoidal area.
pub fn roc_curve(samples: &[(f64, bool)]) -> Result<RocCurve> {
    let p = samples.iter().filter(|s| s.1).count();
    let n = samples.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::Undefined(format!("ROC needs both classes ({p} positives, {n} negatives)")));
    }
    if samples.iter().any(|s| !s.0.is_finite()) {
        return Err(Error::invalid("non-finite score"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x0, y0) = *points.last().unwrap();
        let (x1, y1) = (fp as f64 / n as f64, tp as f64 / p as f64);
        auc += (x1 - x0) * (y0 + y1) / 2.0;
        points.push((x1, y1));
    }
    Ok(RocCurve { device_type: None, points, auc })
}

/// Fraction of positive/negative pairs ordered correctly, ties counting half.
pub fn rank_auc(samples: &[(f64, bool)]) -> Result<f64> {
    let pos: Vec<f64> = samples.iter().filter(|s| s.1).map(|s| s.0).collect();
    let neg: Vec<f64> = samples.iter().filter(|s| !s.1).map(|s| s.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Undefined("rank statistic needs both classes".into()));
    }
    let mut wins = 0.0;
    for &a in &pos {
        for &b in &neg {
            wins += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

/// One-vs-rest ROC for `device_type` over `(true type, class scores)` samples,
/// scored by that type's output.
pub fn roc_auc_per_type(samples: &[(DeviceType, Vec<f64>)], device_type: DeviceType) -> Result<RocCurve> {
    let k = device_type.index();
    let flat = samples
        .iter()
        .map(|(t, s)| {
            s.get(k)
                .map(|&v| (v, *t == device_type))
                .ok_or_else(|| Error::ShapeMismatch { expected: "10 class scores".into(), got: s.len().to_string() })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut curve = roc_curve(&flat)?;
    curve.device_type = Some(device_type);
    Ok(curve)
}
