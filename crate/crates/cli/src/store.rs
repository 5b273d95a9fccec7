//! Run directory layout. Every artifact is written atomically.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cascade_screen::fsutil::{read_json, write_atomic, write_json_atomic};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Generate,
    Split,
    Balance,
    FitDetector,
    Train,
    Calibrate,
    Evaluate,
    Report,
}

impl Stage {
    pub fn command(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Split => "split",
            Stage::Balance => "balance",
            Stage::FitDetector => "fit-detector",
            Stage::Train => "train",
            Stage::Calibrate => "calibrate",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

pub struct RunStore {
    pub root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunStore { root: root.into() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn config_path(&self) -> PathBuf {
        self.path("config.json")
    }
    pub fn manifest_path(&self) -> PathBuf {
        self.path("manifest.json")
    }
    pub fn split_path(&self) -> PathBuf {
        self.path("split.json")
    }
    pub fn balanced_path(&self) -> PathBuf {
        self.path("balanced_sets.json")
    }
    pub fn ledger_path(&self) -> PathBuf {
        self.path("balance_ledger.json")
    }
    pub fn detector_path(&self) -> PathBuf {
        self.path("models/detector.cscd")
    }
    pub fn classifier_path(&self) -> PathBuf {
        self.path("models/classifier.cscd")
    }
    pub fn negatives_path(&self) -> PathBuf {
        self.path("hard_negatives.json")
    }
    pub fn calibration_path(&self) -> PathBuf {
        self.path("calibration.json")
    }
    pub fn cascade_path(&self) -> PathBuf {
        self.path("cascade_output.json")
    }
    pub fn reports_dir(&self) -> PathBuf {
        self.path("reports")
    }

    /// Fails with the name of the stage that produces `path` when it is missing.
    pub fn require(&self, path: &Path, producer: Stage) -> anyhow::Result<()> {
        if !path.exists() {
            bail!(
                "missing {} in {}; run `{}` first",
                path.strip_prefix(&self.root).unwrap_or(path).display(),
                self.root.display(),
                producer.command()
            );
        }
        Ok(())
    }

    pub fn read<T: DeserializeOwned>(&self, path: &Path, producer: Stage) -> anyhow::Result<T> {
        self.require(path, producer)?;
        Ok(read_json(path)?)
    }

    pub fn write<T: Serialize>(&self, path: &Path, value: &T) -> anyhow::Result<()> {
        write_json_atomic(path, value).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_text(&self, path: &Path, text: &str) -> anyhow::Result<()> {
        write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
    }

    /// Resolves the run configuration: an explicit file wins, but it must
    /// agree with the snapshot if the run already has one.
    pub fn resolve_config(&self, explicit: Option<RunConfig>) -> anyhow::Result<RunConfig> {
        let snapshot = self.config_path();
        let stored: Option<RunConfig> = if snapshot.exists() { Some(read_json(&snapshot)?) } else { None };
        match (explicit, stored) {
            (Some(c), Some(s)) if c != s => bail!(
                "config (run id {}) differs from the snapshot in {} (run id {}); use a fresh run directory",
                c.run_id(),
                self.root.display(),
                s.run_id()
            ),
            (Some(c), _) => Ok(c),
            (None, Some(s)) => Ok(s),
            (None, None) => bail!("no config given and {} has no config snapshot", self.root.display()),
        }
    }

    pub fn write_config(&self, cfg: &RunConfig) -> anyhow::Result<()> {
        self.write(&self.config_path(), cfg)?;
        self.write(&self.path("run.json"), &serde_json::json!({ "run_id": cfg.run_id() }))
    }
}
