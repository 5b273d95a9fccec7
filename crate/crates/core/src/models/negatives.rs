//! Hard-negative selection from tier-1 false positives.

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BoundingBox, ScoredBox};

/// Candidates must overlap every ROI less than this to count as background.
pub const NEGATIVE_MAX_IOU: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardNegative {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
}

/// Per-image tier-1 output together with the image's ground truth.
pub struct MiningInput<'a> {
    pub image_id: &'a str,
    /// Sorted by descending score.
    pub gbbs: &'a [ScoredBox],
    pub rois: &'a [BoundingBox],
}

/// Takes up to `count` false positives, hardest first within each image and
/// round-robin across images (in input order) so no single image dominates.
pub fn mine_hard_negatives(inputs: &[MiningInput<'_>], count: usize, max_iou: f64) -> Vec<HardNegative> {
    let per_image: Vec<Vec<&ScoredBox>> = inputs
        .iter()
        .map(|m| {
            m.gbbs
                .iter()
                .filter(|g| m.rois.iter().all(|r| iou(&g.bbox, r) < max_iou))
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    let depth = per_image.iter().map(Vec::len).max().unwrap_or(0);
    'outer: for rank in 0..depth {
        for (m, list) in inputs.iter().zip(&per_image) {
            if out.len() == count {
                break 'outer;
            }
            if let Some(g) = list.get(rank) {
                out.push(HardNegative { image_id: m.image_id.to_string(), bbox: g.bbox, score: g.score });
            }
        }
    }
    out
}
