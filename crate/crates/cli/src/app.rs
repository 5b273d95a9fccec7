use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::stages::{self, Outcome};
use crate::store::RunStore;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cascade-screen", version, about = "Two-tier implanted device screening on chest radiographs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Run configuration (JSON). Defaults to the run directory's snapshot.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "CASCADE_SCREEN_RUN_DIR", default_value = "run")]
    pub run_dir: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tier-1 threshold for `evaluate`, bypassing calibration.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also render PR/ROC plots as SVG.
    #[arg(long)]
    pub emit_svg: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the corpus: manifest and pixel files.
    Generate(Common),
    /// Patient-level then exam-level split.
    Split(Common),
    /// Expand Training/Validation to equal per-type counts.
    Balance(Common),
    /// Build the tier-1 template detector.
    FitDetector(Common),
    /// Mine hard negatives and train the tier-2 classifier.
    Train(Common),
    /// Choose the tier-1 threshold for full validation recall.
    Calibrate(Common),
    /// Run both tiers over the Testing images.
    Evaluate(Common),
    /// Write tables, curves and the misclassification audit.
    Report(Common),
    /// Every stage in order.
    Pipeline(Common),
    /// Write the default configuration to stdout.
    DefaultConfig,
}

fn resolve(common: &Common, fresh: bool) -> anyhow::Result<(RunStore, RunConfig)> {
    let store = RunStore::new(&common.run_dir);
    let mut explicit = match &common.config {
        Some(p) => Some(RunConfig::load(p)?),
        None if fresh && !store.config_path().exists() => Some(RunConfig::default()),
        None => None,
    };
    if let Some(seed) = common.seed {
        let base = match explicit.take() {
            Some(c) => c,
            None => store.resolve_config(None)?,
        };
        explicit = Some(RunConfig { seed, ..base });
    }
    let cfg = store.resolve_config(explicit)?;
    cfg.validate()?;
    Ok((store, cfg))
}

fn run_inner(cli: Cli) -> anyhow::Result<Outcome> {
    use Command::*;
    let (common, fresh) = match &cli.command {
        DefaultConfig => {
            println!("{}", serde_json::to_string_pretty(&RunConfig::default())?);
            return Ok(Outcome::Done);
        }
        Generate(c) | Pipeline(c) => (c.clone(), true),
        Split(c) | Balance(c) | FitDetector(c) | Train(c) | Calibrate(c) | Evaluate(c) | Report(c) => {
            (c.clone(), false)
        }
    };
    let (store, cfg) = resolve(&common, fresh)?;
    match cli.command {
        Generate(_) => stages::generate(&store, &cfg),
        Split(_) => stages::split(&store, &cfg),
        Balance(_) => stages::balance(&store, &cfg),
        FitDetector(_) => stages::fit_detector_stage(&store, &cfg),
        Train(_) => stages::train(&store, &cfg),
        Calibrate(_) => stages::calibrate(&store, &cfg),
        Evaluate(_) => stages::evaluate(&store, &cfg, common.threshold),
        Report(_) => stages::report(&store, &cfg, common.emit_svg),
        Pipeline(_) => pipeline(&store, &cfg, common.threshold, common.emit_svg),
        DefaultConfig => unreachable!(),
    }
}

/// All stages in order. An infeasible calibration still evaluates at the
/// max-recall threshold, and the run reports the infeasibility at the end.
pub fn pipeline(store: &RunStore, cfg: &RunConfig, threshold: Option<f64>, emit_svg: bool) -> anyhow::Result<Outcome> {
    stages::generate(store, cfg)?;
    stages::split(store, cfg)?;
    stages::balance(store, cfg)?;
    stages::fit_detector_stage(store, cfg)?;
    stages::train(store, cfg)?;
    let cal = stages::calibrate(store, cfg)?;
    stages::evaluate(store, cfg, threshold)?;
    stages::report(store, cfg, emit_svg)?;
    Ok(cal)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match run_inner(cli) {
        Ok(Outcome::Done) => EXIT_OK,
        Ok(Outcome::Infeasible) => {
            eprintln!("calibration infeasible: no grid threshold reaches full validation recall");
            EXIT_INFEASIBLE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
