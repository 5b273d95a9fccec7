//! Tier-1 and tier-2 model contracts and their reference implementations.

pub mod classifier;
pub mod detector;
pub mod format;
pub mod mlp;
pub mod negatives;

use crate::corpus::{Patch, Radiograph, NUM_CLASSES};
use crate::error::Result;
use crate::geometry::ScoredBox;

pub use classifier::{
    argmax, detrend, feature_dim, preprocess, train_classifier, train_with_evaluator, EpochEvaluator, EpochRecord,
    LabeledPatch, ReferenceClassifier, TrainConfig, TrainingMeta, ValidationAccuracy,
};
pub use detector::{canonical_patch, detector_patch, fit_detector, ncc, DetectorConfig, DetectorState};
pub use format::{ModelFile, SCHEMA_VERSION};
pub use mlp::Mlp;
pub use negatives::{mine_hard_negatives, HardNegative, MiningInput, NEGATIVE_MAX_IOU};

/// Tier-1 detector: every candidate window with a score in `[0, 1]`,
/// unthresholded. Must be deterministic.
pub trait ProposalScorer: Send + Sync {
    fn score(&self, image: &Radiograph) -> Result<Vec<ScoredBox>>;
}

/// Tier-2 classifier: independent sigmoid scores for the nine device types
/// followed by background.
pub trait RoiClassifier: Send + Sync {
    fn patch_size(&self) -> usize;

    fn classify(&self, patch: &Patch) -> Result<[f64; NUM_CLASSES]>;

    fn classify_batch(&self, patches: &[Patch]) -> Result<Vec<[f64; NUM_CLASSES]>> {
        patches.iter().map(|p| self.classify(p)).collect()
    }
}
