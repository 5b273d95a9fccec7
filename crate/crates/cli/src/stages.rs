//! One function per subcommand. Each reads its predecessors' artifacts from
//! the run store and writes its own.

use std::collections::BTreeMap;

use anyhow::{bail, Context};
use cascade_screen::cascade::{
    calibrate_threshold, run_cascade, tier1_from_scores, CalibrationImage, CalibrationResult, CascadeOutput, DiskImageStore,
    ImageStore,
};
use cascade_screen::corpus::{
    extract_patch, generate_synthetic_corpus, load_manifest, save_manifest, CorpusManifest, Radiograph, RoiAnnotation,
    View, BACKGROUND_CLASS,
};
use cascade_screen::curation::{
    balance_datasets, split_exams, split_patients, BalanceLedger, BalancedItem, BalancedSets, ItemKind,
    SplitAssignment, Subset,
};
use cascade_screen::fsutil::write_atomic;
use cascade_screen::geometry::{iou, size_aspect_filter, BoundingBox, ScoredBox};
use cascade_screen::metrics::{
    audit_csv, build_reports, pr_csv, roc_csv, svg_plot, tier1_csv, tier2_csv, SvgSeries, TierReport,
};
use cascade_screen::models::{
    detector_patch, fit_detector, mine_hard_negatives, train_classifier, DetectorState, HardNegative, LabeledPatch,
    MiningInput, ProposalScorer, ReferenceClassifier, NEGATIVE_MAX_IOU,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::store::{RunStore, Stage};

/// Result of a stage that can finish without failing but short of its goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    /// Calibration could not reach full validation recall.
    Infeasible,
}

fn load_manifest_from(store: &RunStore) -> anyhow::Result<CorpusManifest> {
    store.require(&store.manifest_path(), Stage::Generate)?;
    Ok(load_manifest(&store.manifest_path())?)
}

fn disk(store: &RunStore) -> DiskImageStore {
    DiskImageStore { root: store.root.clone() }
}

fn frontal_ids(manifest: &CorpusManifest, split: &SplitAssignment, subset: Subset) -> Vec<String> {
    let index = manifest.index();
    split
        .subset_image_ids(manifest, subset)
        .into_iter()
        .filter(|id| index.image(id).is_some_and(|r| r.view == View::Frontal))
        .collect()
}

fn load_images(
    store: &RunStore,
    manifest: &CorpusManifest,
    ids: impl IntoIterator<Item = String>,
) -> anyhow::Result<BTreeMap<String, Radiograph>> {
    let index = manifest.index();
    let ids: Vec<String> = ids.into_iter().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let disk = disk(store);
    ids.par_iter()
        .map(|id| {
            let rec = index.image(id).with_context(|| format!("unknown image {id}"))?;
            Ok((id.clone(), disk.load(rec)?))
        })
        .collect()
}

fn frontal_rois<'a>(manifest: &'a CorpusManifest, image_id: &str) -> Vec<&'a RoiAnnotation> {
    manifest.index().rois_of_image(image_id).iter().copied().filter(|r| r.view == View::Frontal).collect()
}

pub fn generate(store: &RunStore, cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let corpus = generate_synthetic_corpus(&cfg.effective_corpus())?;
    for rec in &corpus.manifest.images {
        let img = &corpus.images[&rec.image_id];
        write_atomic(&store.path(&rec.pixel_file), &img.to_pgm())?;
    }
    save_manifest(&corpus.manifest, &store.manifest_path())?;
    store.write_config(cfg)?;
    Ok(Outcome::Done)
}

pub fn split(store: &RunStore, cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let manifest = load_manifest_from(store)?;
    let patients = split_patients(&manifest, cfg.patient_ratio, cfg.seed)?;
    let assignment = split_exams(&manifest, &patients, cfg.exam_ratio, cfg.seed)?;
    store.write(&store.split_path(), &assignment)?;
    Ok(Outcome::Done)
}

pub fn balance(store: &RunStore, cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let manifest = load_manifest_from(store)?;
    let assignment: SplitAssignment = store.read(&store.split_path(), Stage::Split)?;
    let (sets, ledger) = balance_datasets(&manifest, &assignment, cfg.seed)?;
    store.write(&store.balanced_path(), &sets)?;
    store.write(&store.ledger_path(), &ledger)?;
    store.write_text(&store.path("balance_ledger.csv"), &ledger.to_csv())?;
    Ok(Outcome::Done)
}

pub fn fit_detector_stage(store: &RunStore, cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let manifest = load_manifest_from(store)?;
    let sets: BalancedSets = store.read(&store.balanced_path(), Stage::Balance)?;
    let rois: BTreeMap<&str, &RoiAnnotation> = manifest.annotations.iter().map(|r| (r.roi_id.as_str(), r)).collect();
    let sources: Vec<&RoiAnnotation> = sets
        .training
        .iter()
        .filter(|it| it.kind == ItemKind::Frontal)
        .map(|it| rois.get(it.roi_id.as_str()).copied().with_context(|| format!("unknown ROI {}", it.roi_id)))
        .collect::<anyhow::Result<_>>()?;
    let images = load_images(store, &manifest, sources.iter().map(|r| r.image_id.clone()))?;
    let examples = sources
        .iter()
        .map(|r| Ok((r.device_type, detector_patch(&images[&r.image_id], &r.bbox, &cfg.detector)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let det = fit_detector(&examples, &cfg.detector)?;
    det.save(&store.detector_path())?;
    Ok(Outcome::Done)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedNegatives {
    pub training: Vec<HardNegative>,
    pub validation: Vec<HardNegative>,
}

/// Up to `count` windows matching `roi`, always including the best one and
/// otherwise evenly spaced down the IoU ranking, so the classifier sees the
/// loose crops tier 1 actually hands it.
fn spread_windows(windows: &[ScoredBox], roi: &BoundingBox, iou_min: f64, count: usize) -> Vec<BoundingBox> {
    let mut ranked: Vec<(f64, BoundingBox)> =
        windows.iter().map(|w| (iou(&w.bbox, roi), w.bbox)).filter(|(v, _)| *v >= iou_min).collect();
    ranked.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.x_min().total_cmp(&b.1.x_min()))
            .then(a.1.y_min().total_cmp(&b.1.y_min()))
            .then(a.1.x_max().total_cmp(&b.1.x_max()))
            .then(a.1.y_max().total_cmp(&b.1.y_max()))
    });
    let n = ranked.len();
    if count == 0 || n == 0 {
        return Vec::new();
    }
    if n <= count {
        return ranked.into_iter().map(|(_, b)| b).collect();
    }
    if count == 1 {
        return vec![ranked[0].1];
    }
    (0..count).map(|k| ranked[k * (n - 1) / (count - 1)].1).collect()
}

/// Patches for one subset: balanced items, optional best-window positives and
/// mined background windows.
fn subset_examples(
    store: &RunStore,
    cfg: &RunConfig,
    manifest: &CorpusManifest,
    split: &SplitAssignment,
    items: &[BalancedItem],
    subset: Subset,
    detector: &DetectorState,
) -> anyhow::Result<(Vec<LabeledPatch>, Vec<HardNegative>)> {
    let size = cfg.train.patch_size;
    let rois: BTreeMap<&str, &RoiAnnotation> = manifest.annotations.iter().map(|r| (r.roi_id.as_str(), r)).collect();
    let frontal = frontal_ids(manifest, split, subset);
    let mut needed: Vec<String> = frontal.clone();
    for it in items {
        let r = rois.get(it.roi_id.as_str()).with_context(|| format!("unknown ROI {}", it.roi_id))?;
        needed.push(r.image_id.clone());
    }
    let images = load_images(store, manifest, needed)?;

    let mut out = Vec::with_capacity(items.len());
    for it in items {
        let r = rois[it.roi_id.as_str()];
        out.push(LabeledPatch { patch: it.materialize(r, &images[&r.image_id], size)?, label: it.device_type.index() });
    }

    let raw: Vec<Vec<ScoredBox>> =
        frontal.par_iter().map(|id| Ok(detector.score(&images[id])?)).collect::<anyhow::Result<_>>()?;
    let tier1: Vec<Vec<ScoredBox>> =
        raw.iter().map(|r| Ok(tier1_from_scores(r, 0.0, &cfg.cascade)?)).collect::<anyhow::Result<_>>()?;
    let gt: Vec<Vec<&RoiAnnotation>> = frontal.iter().map(|id| frontal_rois(manifest, id)).collect();

    for ((id, windows), rs) in frontal.iter().zip(&raw).zip(&gt) {
        let windows = size_aspect_filter(windows, &cfg.cascade.band);
        for r in rs {
            for b in spread_windows(&windows, &r.bbox, cfg.cascade.match_iou, cfg.window_positives) {
                out.push(LabeledPatch { patch: extract_patch(&images[id], &b, size)?, label: r.device_type.index() });
            }
        }
    }

    let mut per_type: BTreeMap<usize, usize> = BTreeMap::new();
    for it in items {
        *per_type.entry(it.device_type.index()).or_default() += 1;
    }
    let largest = per_type.values().copied().max().unwrap_or(0);
    let count = (cfg.background_multiple * largest as f64).round() as usize;
    let boxes: Vec<Vec<BoundingBox>> = gt.iter().map(|rs| rs.iter().map(|r| r.bbox).collect()).collect();
    let inputs: Vec<MiningInput<'_>> = frontal
        .iter()
        .zip(&tier1)
        .zip(&boxes)
        .map(|((id, g), b)| MiningInput { image_id: id, gbbs: g, rois: b })
        .collect();
    let negatives = mine_hard_negatives(&inputs, count, NEGATIVE_MAX_IOU);
    for n in &negatives {
        out.push(LabeledPatch { patch: extract_patch(&images[&n.image_id], &n.bbox, size)?, label: BACKGROUND_CLASS });
    }
    Ok((out, negatives))
}

pub fn train(store: &RunStore, cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let manifest = load_manifest_from(store)?;
    let split: SplitAssignment = store.read(&store.split_path(), Stage::Split)?;
    let sets: BalancedSets = store.read(&store.balanced_path(), Stage::Balance)?;
    store.require(&store.detector_path(), Stage::FitDetector)?;
    let detector = DetectorState::load(&store.detector_path())?;
    let (train_set, train_neg) =
        subset_examples(store, cfg, &manifest, &split, &sets.training, Subset::Training, &detector)?;
    let (val_set, val_neg) =
        subset_examples(store, cfg, &manifest, &split, &sets.validation, Subset::Validation, &detector)?;
    if val_set.is_empty() {
        bail!("validation set is empty; cannot select a checkpoint");
    }
    let model = train_classifier(&train_set, &val_set, &cfg.train, cfg.seed)?;
    model.save(&store.classifier_path())?;
    store.write(&store.negatives_path(), &MinedNegatives { training: train_neg, validation: val_neg })?;
    Ok(Outcome::Done)
}

/// Calibrates on the frontal Validation images against their frontal ROIs.
pub fn calibrate(store: &RunStore, cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let manifest = load_manifest_from(store)?;
    let split: SplitAssignment = store.read(&store.split_path(), Stage::Split)?;
    store.require(&store.detector_path(), Stage::FitDetector)?;
    let detector = DetectorState::load(&store.detector_path())?;
    let ids = frontal_ids(&manifest, &split, Subset::Validation);
    let images = load_images(store, &manifest, ids.clone())?;
    let cal: Vec<CalibrationImage<'_>> = ids
        .iter()
        .map(|id| CalibrationImage { image: &images[id], rois: frontal_rois(&manifest, id).iter().map(|r| r.bbox).collect() })
        .collect();
    let result = calibrate_threshold(&detector, &cal, &cfg.calibration_grid, &cfg.cascade)?;
    store.write(&store.calibration_path(), &result)?;
    Ok(if result.feasible { Outcome::Done } else { Outcome::Infeasible })
}

pub fn evaluate(store: &RunStore, cfg: &RunConfig, threshold: Option<f64>) -> anyhow::Result<Outcome> {
    let manifest = load_manifest_from(store)?;
    let split: SplitAssignment = store.read(&store.split_path(), Stage::Split)?;
    let t = match threshold {
        Some(t) => t,
        None => store.read::<CalibrationResult>(&store.calibration_path(), Stage::Calibrate)?.chosen_threshold,
    };
    store.require(&store.detector_path(), Stage::FitDetector)?;
    store.require(&store.classifier_path(), Stage::Train)?;
    let detector = DetectorState::load(&store.detector_path())?;
    let classifier = ReferenceClassifier::load(&store.classifier_path())?;
    let ids = frontal_ids(&manifest, &split, Subset::Testing);
    let out = run_cascade(&manifest, &ids, &disk(store), &detector, &classifier, t, &cfg.cascade)?;
    store.write(&store.cascade_path(), &out)?;
    Ok(Outcome::Done)
}

/// Tier-1 table thresholds: 0.5, the cascade threshold and any extras,
/// descending, never below what the cascade kept.
pub fn report_thresholds(cfg: &RunConfig, cascade_threshold: f64) -> Vec<f64> {
    let mut ts: Vec<f64> = [0.5, cascade_threshold]
        .into_iter()
        .chain(cfg.report.extra_tier1_thresholds.iter().copied())
        .filter(|&t| t >= cascade_threshold && t <= 1.0)
        .collect();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    ts
}

pub fn report(store: &RunStore, cfg: &RunConfig, emit_svg: bool) -> anyhow::Result<Outcome> {
    let out: CascadeOutput = store.read(&store.cascade_path(), Stage::Evaluate)?;
    let ledger: BalanceLedger = store.read(&store.ledger_path(), Stage::Balance)?;
    let calibration: Option<CalibrationResult> =
        if store.calibration_path().exists() { Some(store.read(&store.calibration_path(), Stage::Calibrate)?) } else { None };
    let rep = build_reports(&out, &report_thresholds(cfg, out.threshold))?;
    let dir = store.reports_dir();
    store.write(&dir.join("report.json"), &rep)?;
    store.write_text(&dir.join("tier1.csv"), &tier1_csv(&rep.tier1))?;
    store.write_text(&dir.join("tier2.csv"), &tier2_csv(&rep.tier2))?;
    if let Some(pr) = &rep.pr_curve {
        store.write_text(&dir.join("pr_curve.csv"), &pr_csv(pr))?;
    }
    store.write_text(&dir.join("roc_curves.csv"), &roc_csv(&rep.roc_curves))?;
    store.write_text(&dir.join("misclassification_audit.csv"), &audit_csv(&rep.audit))?;
    store.write_text(&dir.join("balance_ledger.csv"), &ledger.to_csv())?;
    store.write_text(&dir.join("summary.txt"), &summary_text(&rep, calibration.as_ref()))?;
    if emit_svg || cfg.report.emit_svg {
        if let Some(pr) = &rep.pr_curve {
            let title = format!("Tier-1 precision-recall (AP {:.3})", pr.average_precision);
            let svg = svg_plot(&title, "recall", "precision", &[SvgSeries { name: "detector".into(), points: &pr.points }]);
            store.write_text(&dir.join("pr_curve.svg"), &svg)?;
        }
        let series: Vec<SvgSeries<'_>> = rep
            .roc_curves
            .iter()
            .map(|c| SvgSeries {
                name: format!("{} ({:.2})", c.device_type.map(|t| t.to_string()).unwrap_or_default(), c.auc),
                points: &c.points,
            })
            .collect();
        store.write_text(&dir.join("roc_curves.svg"), &svg_plot("Tier-2 one-vs-rest ROC", "false positive rate", "true positive rate", &series))?;
    }
    Ok(Outcome::Done)
}

fn summary_text(rep: &TierReport, calibration: Option<&CalibrationResult>) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    if let Some(c) = calibration {
        let _ = writeln!(
            s,
            "calibrated threshold {} (feasible: {}, {} validation ROIs on {} images)\n",
            c.chosen_threshold, c.feasible, c.roi_count, c.image_count
        );
    }
    let _ = writeln!(s, "Tier 1: detection");
    let _ = writeln!(s, "{:>10} {:>8} {:>6} {:>6} {:>6} {:>9} {:>11} {:>8}", "threshold", "GBBs", "TP", "FP", "FN", "precision", "sensitivity", "GBB/ROI");
    for r in &rep.tier1 {
        let _ = writeln!(
            s,
            "{:>10} {:>8} {:>6} {:>6} {:>6} {:>9.2} {:>11.2} {:>8}",
            r.threshold,
            r.total_gbbs,
            r.tp,
            r.fp,
            r.fn_,
            r.precision,
            r.sensitivity,
            r.gbbs_per_detected_roi.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into())
        );
    }
    let t = &rep.tier2;
    let _ = writeln!(s, "\nTier 2: type classification");
    let _ = writeln!(s, "tier-1 output        {}", t.total_gbbs);
    let _ = writeln!(s, "labeled as device    {}", t.labeled);
    let _ = writeln!(s, "suppressed           {}", t.suppressed);
    let _ = writeln!(s, "  correct type       {}", t.correct);
    let _ = writeln!(s, "  incorrect type     {}", t.incorrect);
    let _ = writeln!(s, "  unmatched          {}", t.unmatched);
    let _ = writeln!(s, "detection precision  {:.2}", t.detection_precision);
    let _ = writeln!(s, "detection sensitivity {:.2}", t.detection_sensitivity);
    let _ = writeln!(s, "type accuracy        {:.1}% ({}/{})", 100.0 * t.accuracy, t.correct_rois, t.roi_count);
    if let Some(pr) = &rep.pr_curve {
        let _ = writeln!(s, "tier-1 AP            {:.3} ({} interpolation)", pr.average_precision, rep.ap_interpolation);
    }
    let _ = writeln!(s, "\nper-type AUC");
    for a in &rep.type_auc {
        let auc = a.auc.map(|v| format!("{v:.3}")).unwrap_or_else(|| "undefined".into());
        let _ = writeln!(s, "  {:<5} {:>9}  (n={}, MRI {})", a.device_type.to_string(), auc, a.positives, a.mri_safety);
    }
    let _ = writeln!(s, "\nmisclassified or missed ROIs: {}", rep.audit.len());
    s
}
