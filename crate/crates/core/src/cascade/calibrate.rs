//! Recall-constrained threshold calibration over a descending grid.

use serde::{Deserialize, Serialize};

use super::{restrict, tier1_from_scores, CascadeParams};
use crate::corpus::Radiograph;
use crate::error::{Error, Result};
use crate::geometry::{match_detections, BoundingBox, ScoredBox};
use crate::models::ProposalScorer;

/// Half-decade ladder from 0.5 down to 2e-6.
pub fn default_grid() -> Vec<f64> {
    vec![
        0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001, 5e-4, 2e-4, 1e-4, 5e-5, 2e-5, 1e-5, 5e-6, 2e-6,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub threshold: f64,
    pub total_gbbs: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub recall: f64,
    pub precision: f64,
    /// Total boxes over detected ROIs; `None` when nothing was detected.
    pub gbbs_per_detected_roi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub chosen_threshold: f64,
    pub feasible: bool,
    pub roi_count: usize,
    pub image_count: usize,
    pub grid: Vec<GridPoint>,
}

impl CalibrationResult {
    pub fn point(&self, threshold: f64) -> Option<&GridPoint> {
        self.grid.iter().find(|p| p.threshold == threshold)
    }
}

pub struct CalibrationImage<'a> {
    pub image: &'a Radiograph,
    pub rois: Vec<BoundingBox>,
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("calibration grid is empty"));
    }
    if grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::invalid("calibration thresholds must lie in [0, 1]"));
    }
    if grid.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::invalid("calibration grid must be strictly descending"));
    }
    Ok(())
}

/// Calibration from precomputed threshold-0 tier-1 outputs, one entry per
/// image paired with its ground-truth boxes.
pub fn calibrate_from_candidates(
    images: &[(Vec<ScoredBox>, Vec<BoundingBox>)],
    grid: &[f64],
    params: &CascadeParams,
) -> Result<CalibrationResult> {
    validate_grid(grid)?;
    if images.is_empty() {
        return Err(Error::invalid("calibration set is empty"));
    }
    let roi_count: usize = images.iter().map(|(_, r)| r.len()).sum();
    let mut points = Vec::with_capacity(grid.len());
    for &t in grid {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (cands, rois) in images {
            let m = match_detections(&restrict(cands, t), rois, params.match_iou);
            tp += m.tp_count;
            fp += m.fp_count;
            fn_ += m.fn_count;
        }
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        points.push(GridPoint {
            threshold: t,
            total_gbbs: tp + fp,
            tp,
            fp,
            fn_,
            recall: ratio(tp, tp + fn_),
            precision: ratio(tp, tp + fp),
            gbbs_per_detected_roi: (tp > 0).then(|| (tp + fp) as f64 / tp as f64),
        });
    }
    let feasible_point = points.iter().find(|p| p.fn_ == 0);
    let (chosen, feasible) = match feasible_point {
        Some(p) => (p.threshold, true),
        None => {
            let best = points.iter().map(|p| p.tp).max().unwrap_or(0);
            (points.iter().find(|p| p.tp == best).unwrap().threshold, false)
        }
    };
    Ok(CalibrationResult {
        chosen_threshold: chosen,
        feasible,
        roi_count,
        image_count: images.len(),
        grid: points,
    })
}

/// Lowers the tier-1 threshold along `grid` (descending) and returns the
/// first value at which every calibration ROI is detected.
pub fn calibrate_threshold(
    scorer: &dyn ProposalScorer,
    images: &[CalibrationImage<'_>],
    grid: &[f64],
    params: &CascadeParams,
) -> Result<CalibrationResult> {
    use rayon::prelude::*;
    validate_grid(grid)?;
    let cands = images
        .par_iter()
        .map(|ci| Ok((tier1_from_scores(&scorer.score(ci.image)?, 0.0, params)?, ci.rois.clone())))
        .collect::<Result<Vec<_>>>()?;
    calibrate_from_candidates(&cands, grid, params)
}
