//! One PASS/FAIL line per acceptance criterion. Runs as a plain binary
//! (`cargo test --test acceptance`) and exits nonzero if anything fails.

mod common;
#[path = "../../core/tests/fixtures/mod.rs"]
mod fixtures;
#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::path::Path;
use std::time::{Duration, Instant};

use cascade_screen::cascade::CalibrationResult;
use cascade_screen::corpus::{DeviceType, Patch};
use cascade_screen::geometry::{iou, match_boxes, nms_indices, size_aspect_filter, BoundingBox, ScoredBox, SizeAspectBand};
use cascade_screen::metrics::{pr_curve, roc_curve, TierReport};
use cascade_screen::models::{train_with_evaluator, EpochEvaluator, LabeledPatch, Mlp, TrainConfig};
use cascade_screen_cli::app::pipeline;
use cascade_screen_cli::stages::{self, Outcome};
use cascade_screen_cli::{RunConfig, RunStore};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    ensure!(took <= limit, "took {:.0}s, limit {}s", took.as_secs_f64(), limit.as_secs());
    Ok(())
}

fn calibration_guarantee() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = RunStore::new(tmp.path());
    let mut cfg = RunConfig::default();
    cfg.corpus.n_patients = 200;
    let err = |e: anyhow::Error| format!("{e:#}");
    stages::generate(&store, &cfg).map_err(err)?;
    stages::split(&store, &cfg).map_err(err)?;
    stages::balance(&store, &cfg).map_err(err)?;
    stages::fit_detector_stage(&store, &cfg).map_err(err)?;
    let outcome = stages::calibrate(&store, &cfg).map_err(err)?;
    let cal: CalibrationResult = read(&store.calibration_path())?;
    ensure!(outcome == Outcome::Done && cal.feasible, "no grid threshold reached full recall");
    let chosen = cal.point(cal.chosen_threshold).ok_or("chosen threshold missing from grid")?;
    ensure!(chosen.recall == 1.0 && chosen.fn_ == 0, "recall {} at {}", chosen.recall, cal.chosen_threshold);
    let mut grid = cal.grid.clone();
    grid.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
    ensure!(
        grid.windows(2).all(|w| w[1].recall <= w[0].recall),
        "recall rises with the threshold somewhere on the grid"
    );
    within(Duration::from_secs(300), start)?;
    Ok(format!("threshold {} on {} ROIs, {} grid points", cal.chosen_threshold, cal.roi_count, cal.grid.len()))
}

struct DemoRuns {
    _tmp: tempfile::TempDir,
    a: RunStore,
    b: RunStore,
}

fn demo_runs() -> Result<DemoRuns, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = common::demo_config();
    let a = RunStore::new(tmp.path().join("a"));
    let b = RunStore::new(tmp.path().join("b"));
    for store in [&a, &b] {
        pipeline(store, &cfg, None, true).map_err(|e| format!("{e:#}"))?;
    }
    Ok(DemoRuns { _tmp: tmp, a, b })
}

fn table2(run: &RunStore) -> Check {
    let rep: TierReport = read(&run.reports_dir().join("report.json"))?;
    let cal: CalibrationResult = read(&run.calibration_path())?;
    ensure!(cal.point(cal.chosen_threshold).is_some_and(|p| p.fn_ == 0), "validation FN > 0 at the calibrated threshold");
    let roi_count = rep.tier2.roi_count;
    for r in &rep.tier1 {
        ensure!(r.tp + r.fp == r.total_gbbs, "TP+FP != total at {}", r.threshold);
        ensure!(r.tp + r.fn_ == roi_count, "TP+FN != ROIs at {}", r.threshold);
    }
    let high = rep.tier1.iter().find(|r| r.threshold == 0.5).ok_or("no row at 0.5")?;
    let low = rep.tier1.iter().find(|r| r.threshold == rep.cascade_threshold).ok_or("no row at the calibrated threshold")?;
    ensure!(low.threshold < high.threshold, "calibrated threshold is 0.5; nothing to compare");
    ensure!(low.precision < high.precision, "precision {} -> {} did not drop", high.precision, low.precision);
    let (gh, gl) = (high.gbbs_per_detected_roi.ok_or("no detections at 0.5")?, low.gbbs_per_detected_roi.unwrap_or(0.0));
    ensure!(gl > gh, "GBB/ROI {gh} -> {gl} did not grow");
    Ok(format!(
        "0.5: {}/{} TP, GBB/ROI {gh:.1}; {}: {}/{} TP, GBB/ROI {gl:.1}",
        high.tp, roi_count, low.threshold, low.tp, roi_count
    ))
}

fn table3(run: &RunStore) -> Check {
    let rep: TierReport = read(&run.reports_dir().join("report.json"))?;
    let t = &rep.tier2;
    ensure!(t.labeled + t.suppressed == t.total_gbbs, "labeled+suppressed != total");
    ensure!(t.correct + t.incorrect + t.unmatched == t.labeled, "correct+incorrect+unmatched != labeled");
    let tier1 = rep.tier1.iter().find(|r| r.threshold == rep.cascade_threshold).ok_or("no tier-1 row")?;
    ensure!(t.unmatched < tier1.fp, "tier-2 FP {} not below tier-1 FP {}", t.unmatched, tier1.fp);
    ensure!(
        t.detected_rois >= tier1.tp,
        "{} matched ROIs labeled after tier 2, {} matched by tier 1",
        t.detected_rois,
        tier1.tp
    );
    Ok(format!("FP {} -> {}, matched ROIs labeled {} of {}", tier1.fp, t.unmatched, t.detected_rois, tier1.tp))
}

fn determinism(runs: &DemoRuns) -> Check {
    let a = common::tree_digest(&runs.a.root);
    let b = common::tree_digest(&runs.b.root);
    if let Some((k, _)) = a.iter().find(|(k, v)| b.get(*k) != Some(*v)) {
        return Err(format!("{k} differs"));
    }
    ensure!(a.len() == b.len(), "file sets differ ({} vs {})", a.len(), b.len());
    Ok(format!("{} files identical", a.len()))
}

fn easy_regime() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = RunStore::new(tmp.path());
    let mut cfg = RunConfig::default();
    cfg.corpus.n_patients = 100;
    cfg.corpus.grade_mix = cascade_screen::corpus::GradeMix { id: 1.0, nr: 0.0, ol: 0.0, nr_ol: 0.0 };
    pipeline(&store, &cfg, None, false).map_err(|e| format!("{e:#}"))?;
    let rep: TierReport = read(&store.reports_dir().join("report.json"))?;
    let took = start.elapsed().as_secs_f64();
    let aucs: Vec<String> = rep
        .type_auc
        .iter()
        .map(|a| format!("{} {}", a.device_type, a.auc.map(|v| format!("{v:.3}")).unwrap_or("-".into())))
        .collect();
    let summary = format!(
        "accuracy {:.3} ({}/{}), AUC [{}], {took:.0}s",
        rep.tier2.accuracy,
        rep.tier2.correct_rois,
        rep.tier2.roi_count,
        aucs.join(", ")
    );
    ensure!(rep.tier2.accuracy >= 0.95, "{summary}");
    ensure!(rep.type_auc.len() == DeviceType::ALL.len(), "{summary}");
    ensure!(rep.type_auc.iter().all(|a| a.auc.is_some_and(|v| v >= 0.95)), "{summary}");
    within(Duration::from_secs(600), start)?;
    Ok(summary)
}

fn lattice_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let (x, y) = (rng.random_range(0..6), rng.random_range(0..6));
    let (w, h) = (rng.random_range(1..5), rng.random_range(1..5));
    BoundingBox::from_origin_size(f64::from(x) * 10.0, f64::from(y) * 10.0, f64::from(w) * 10.0, f64::from(h) * 10.0)
        .unwrap()
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..1000 {
        let n = rng.random_range(2..=50);
        let mut s: Vec<(f64, bool)> =
            (0..n).map(|_| (f64::from(rng.random_range(0..12)) / 11.0, rng.random_bool(0.5))).collect();
        s[0].1 = true;
        s[1].1 = false;
        let pos: Vec<f64> = s.iter().filter(|x| x.1).map(|x| x.0).collect();
        let neg: Vec<f64> = s.iter().filter(|x| !x.1).map(|x| x.0).collect();
        let auc = roc_curve(&s).map_err(|e| e.to_string())?.auc;
        let want = oracles::auc_pairs(&pos, &neg);
        ensure!((auc - want).abs() <= 1e-9, "case {case}: AUC {auc} vs {want}");
        let positives = pos.len() + rng.random_range(0..3);
        let ap = pr_curve(&s, positives).map_err(|e| e.to_string())?.average_precision;
        let want = oracles::ap_sweep(&s, positives);
        ensure!((ap - want).abs() <= 1e-12, "case {case}: AP {ap} vs {want}");

        let boxes: Vec<ScoredBox> = (0..rng.random_range(0..=6))
            .map(|_| ScoredBox::new(lattice_box(&mut rng), f64::from(rng.random_range(0..4)) / 4.0).unwrap())
            .collect();
        let thr = [0.0, 0.25, 0.4, 0.5, 1.0][rng.random_range(0..5)];
        ensure!(nms_indices(&boxes, thr) == oracles::nms_brute(&boxes, thr), "case {case}: NMS differs");

        let g: Vec<BoundingBox> = (0..rng.random_range(0..=6)).map(|_| lattice_box(&mut rng)).collect();
        let r: Vec<BoundingBox> = (0..rng.random_range(0..=6)).map(|_| lattice_box(&mut rng)).collect();
        let mut got: Vec<(usize, usize)> = match_boxes(&g, &r, 0.5).pairs.iter().map(|p| (p.roi, p.gbb)).collect();
        got.sort();
        ensure!(got == oracles::match_brute(&g, &r, 0.5), "case {case}: matching differs");
    }
    Ok("1000 instances".into())
}

fn geometry() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let any_box = |rng: &mut ChaCha8Rng| {
        let (x, y) = (rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
        BoundingBox::from_origin_size(x, y, rng.random_range(0.5..150.0), rng.random_range(0.5..150.0)).unwrap()
    };
    let band = SizeAspectBand::default();
    for case in 0..1000 {
        let (a, b) = (any_box(&mut rng), any_box(&mut rng));
        let v = iou(&a, &b);
        ensure!(v == iou(&b, &a), "case {case}: IoU not symmetric");
        ensure!((0.0..=1.0).contains(&v), "case {case}: IoU {v} out of bounds");
        ensure!(iou(&a, &a) == 1.0, "case {case}: self IoU");
        let set: Vec<ScoredBox> = (0..rng.random_range(0..20)).map(|_| ScoredBox::new(any_box(&mut rng), 0.5).unwrap()).collect();
        let once = size_aspect_filter(&set, &band);
        ensure!(size_aspect_filter(&once, &band) == once, "case {case}: filter not idempotent");
    }
    let b = |w: f64, h: f64| BoundingBox::from_origin_size(0.0, 0.0, w, h).unwrap();
    let inside = [b(15.0, 15.0), b(120.0, 120.0), b(70.0, 100.0), b(84.0, 60.0)];
    let outside = [b(14.999, 15.0), b(120.001, 120.0), b(69.9, 100.0), b(84.1, 60.0)];
    ensure!(inside.iter().all(|x| band.accepts(x)), "an exact band edge was rejected");
    ensure!(outside.iter().all(|x| !band.accepts(x)), "a box just outside the band was accepted");
    Ok("1000 fuzz cases, edges at 15, 120, 0.7, 1.4".into())
}

struct Scripted(Vec<f64>);

impl EpochEvaluator for Scripted {
    fn evaluate(&mut self, epoch: usize, _model: &Mlp<f32>) -> cascade_screen::error::Result<f64> {
        Ok(self.0[epoch - 1])
    }
}

fn training_numerics() -> Check {
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (input, hidden, classes, batch) =
            (rng.random_range(1..=6), rng.random_range(1..=6), rng.random_range(1..=4), rng.random_range(1..=5));
        let mut mlp = Mlp::<f64>::init(input, hidden, classes, &mut rng);
        let (x, y) = loop {
            let x = Array2::from_shape_fn((batch, input), |_| rng.random_range(-2.0..2.0));
            let y = Array2::from_shape_fn((batch, classes), |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 });
            // keep pre-activations off the ReLU kink
            if (x.dot(&mlp.w1.t()) + &mlp.b1).iter().all(|p: &f64| p.abs() > 1e-3) {
                break (x, y);
            }
        };
        let analytic = mlp.loss_and_gradients(x.view(), y.view()).1.flatten();
        for (k, &a) in analytic.iter().enumerate() {
            let orig = *mlp.parameter_mut(k);
            *mlp.parameter_mut(k) = orig + eps;
            let up = mlp.loss(x.view(), y.view());
            *mlp.parameter_mut(k) = orig - eps;
            let down = mlp.loss(x.view(), y.view());
            *mlp.parameter_mut(k) = orig;
            let numeric = (up - down) / (2.0 * eps);
            let scale = a.abs().max(numeric.abs());
            if scale > 1e-6 {
                let rel = (a - numeric).abs() / scale;
                worst = worst.max(rel);
                ensure!(rel <= 1e-4, "config {seed} parameter {k}: relative error {rel:e}");
            } else {
                ensure!((a - numeric).abs() <= 1e-9, "config {seed} parameter {k}: {a} vs {numeric}");
            }
        }
    }

    let train: Vec<LabeledPatch> = (0..8)
        .map(|i| {
            let mut p = Patch::filled(4, 0.2);
            p.set(if i % 2 == 0 { 0 } else { 3 }, i % 4, 0.9);
            LabeledPatch { patch: p, label: i % 2 }
        })
        .collect();
    let sequences: [&[f64]; 4] = [&[0.3, 0.5, 0.4], &[0.5, 0.5, 0.5], &[0.1, 0.2, 0.3, 0.4], &[0.0, 0.9, 0.1, 0.95, 0.95]];
    let want = [2, 1, 4, 4];
    for (seq, want) in sequences.iter().zip(want) {
        let cfg = TrainConfig { learning_rate: 0.01, batch_size: 4, max_epochs: seq.len(), hidden_units: 4, patch_size: 4 };
        let m = train_with_evaluator(&train, &mut Scripted(seq.to_vec()), &cfg, 3).map_err(|e| e.to_string())?;
        ensure!(m.meta.best_epoch == want, "{seq:?}: kept epoch {} not {want}", m.meta.best_epoch);
        let cut = TrainConfig { max_epochs: want, ..cfg };
        let short = train_with_evaluator(&train, &mut Scripted(seq[..want].to_vec()), &cut, 3).map_err(|e| e.to_string())?;
        ensure!(m.mlp == short.mlp, "{seq:?}: kept parameters are not those of epoch {want}");
    }
    Ok(format!("100 configs, worst relative error {worst:.1e}; 4 checkpoint scripts"))
}

fn curation() -> Check {
    for seed in 0..50 {
        let m = fixtures::random_manifest(seed);
        let (split, sets, ledger) = fixtures::curate(&m, seed);
        fixtures::check_curation(&m, &split, &sets, &ledger).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    Ok("50 seeds".into())
}

fn report(name: &str, start: Instant, result: Check) -> bool {
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(detail) => {
            println!("PASS  {name}: {detail} [{secs:.1}s]");
            true
        }
        Err(detail) => {
            println!("FAIL  {name}: {detail} [{secs:.1}s]");
            false
        }
    }
}

fn main() {
    let mut ok = true;
    let t = Instant::now();
    ok &= report("calibration guarantee", t, calibration_guarantee());

    let t = Instant::now();
    match demo_runs() {
        Ok(runs) => {
            ok &= report("tier-1 table structure", t, table2(&runs.a));
            ok &= report("tier-2 table structure", t, table3(&runs.a));
            ok &= report("determinism", t, determinism(&runs));
        }
        Err(e) => {
            for name in ["tier-1 table structure", "tier-2 table structure", "determinism"] {
                ok &= report(name, t, Err(format!("demo pipeline failed: {e}")));
            }
        }
    }

    let t = Instant::now();
    ok &= report("easy regime quality", t, easy_regime());
    let t = Instant::now();
    ok &= report("metrics oracles", t, metric_oracles());
    let t = Instant::now();
    ok &= report("geometry invariants", t, geometry());
    let t = Instant::now();
    ok &= report("training numerics", t, training_numerics());
    let t = Instant::now();
    ok &= report("curation invariants", t, curation());

    if !ok {
        std::process::exit(1);
    }
}
