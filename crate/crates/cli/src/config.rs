use std::path::Path;

use anyhow::{bail, Context};
use cascade_screen::cascade::{default_grid, CascadeParams};
use cascade_screen::corpus::CorpusConfig;
use cascade_screen::models::{DetectorConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportOptions {
    pub emit_svg: bool,
    /// Extra tier-1 table rows besides 0.5 and the calibrated threshold.
    pub extra_tier1_thresholds: Vec<f64>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { emit_svg: false, extra_tier1_thresholds: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; replaces `corpus.seed` when the corpus is generated.
    pub seed: u64,
    pub corpus: CorpusConfig,
    /// Share of patients kept for Training/Validation.
    pub patient_ratio: f64,
    /// Share of Training/Validation exams tagged Training.
    pub exam_ratio: f64,
    pub calibration_grid: Vec<f64>,
    pub detector: DetectorConfig,
    pub train: TrainConfig,
    pub cascade: CascadeParams,
    /// Background examples as a multiple of the largest per-type count.
    pub background_multiple: f64,
    /// Scanning windows per frontal ROI added as positives of its type,
    /// chosen among those matching the ROI and spread over their IoU range.
    pub window_positives: usize,
    pub report: ReportOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            corpus: CorpusConfig::default(),
            patient_ratio: 0.8,
            exam_ratio: 0.75,
            calibration_grid: default_grid(),
            detector: DetectorConfig::default(),
            train: TrainConfig::default(),
            cascade: CascadeParams::default(),
            background_multiple: 2.0,
            window_positives: 4,
            report: ReportOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        for (name, r) in [("patient_ratio", self.patient_ratio), ("exam_ratio", self.exam_ratio)] {
            if !(0.0..=1.0).contains(&r) {
                bail!("{name} {r} outside [0, 1]");
            }
        }
        if !(self.background_multiple >= 0.0 && self.background_multiple.is_finite()) {
            bail!("background_multiple must be a nonnegative number");
        }
        self.corpus.validate()?;
        self.detector.validate()?;
        self.train.validate()?;
        self.cascade.validate()?;
        Ok(())
    }

    /// The corpus configuration actually generated, with the run seed.
    pub fn effective_corpus(&self) -> CorpusConfig {
        CorpusConfig { seed: self.seed, ..self.corpus.clone() }
    }

    pub fn canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("config serializes")
    }

    /// Content hash identifying the run.
    pub fn run_id(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json()))
    }
}
