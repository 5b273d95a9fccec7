//! Reference ROI classifier and its training loop.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::format::ModelFile;
use super::mlp::Mlp;
use super::RoiClassifier;
use crate::corpus::{Patch, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub hidden_units: usize,
    /// Side of the square input patch.
    pub patch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 16,
            max_epochs: 100,
            hidden_units: 1024,
            patch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.hidden_units > 0
            && self.patch_size > 0
        {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub train_examples: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceClassifier {
    pub config: TrainConfig,
    pub mlp: Mlp<f32>,
    pub meta: TrainingMeta,
}

/// Removes the least-squares intensity plane (soft-tissue shading varies far
/// more between images than the devices do), then standardises to zero mean
/// and unit variance. Flat patches map to zeros.
pub fn detrend(patch: &Patch) -> Vec<f32> {
    let size = patch.size;
    let n = patch.pixels.len() as f64;
    let c = (size as f64 - 1.0) / 2.0;
    let mean = patch.pixels.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    // centred coordinates on a square grid are orthogonal, so each slope is
    // a single projection
    let (mut su, mut sv, mut uu) = (0.0, 0.0, 0.0);
    for (k, &v) in patch.pixels.iter().enumerate() {
        let (u, w) = ((k % size) as f64 - c, (k / size) as f64 - c);
        su += u * f64::from(v);
        sv += w * f64::from(v);
        uu += u * u;
    }
    let (gx, gy) = if uu > 0.0 { (su / uu, sv / uu) } else { (0.0, 0.0) };
    let resid: Vec<f64> = patch
        .pixels
        .iter()
        .enumerate()
        .map(|(k, &v)| f64::from(v) - mean - gx * ((k % size) as f64 - c) - gy * ((k / size) as f64 - c))
        .collect();
    standardized(&resid)
}

fn standardized(v: &[f64]) -> Vec<f32> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd < 1e-6 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|r| ((r - mean) / sd) as f32).collect()
}

/// Signed gradient directions per cell histogram.
pub const ORIENTATION_BINS: usize = 12;

/// Cells per side of the feature grid.
pub fn grid_cells(patch_size: usize) -> usize {
    (patch_size / 4).clamp(1, 8)
}

/// Length of the vector [`preprocess`] produces.
pub fn feature_dim(patch_size: usize) -> usize {
    let g = grid_cells(patch_size);
    g * g * (ORIENTATION_BINS + 1)
}

/// Fixed feature map in front of the trainable layers, standing in for a
/// frozen convolutional base: per cell, a histogram of signed gradient
/// directions (votes shared bilinearly between neighbouring cells and bins,
/// then normalised by the energy of the surrounding 3x3 cells), followed by
/// the cell's mean detrended intensity. The whole vector is standardised.
pub fn preprocess(patch: &Patch) -> Vec<f32> {
    let n = patch.size;
    let g = grid_cells(n);
    let px = |x: usize, y: usize| f64::from(patch.get(x, y));
    let mut hist = vec![0.0f64; g * g * ORIENTATION_BINS];
    let cell = n as f64 / g as f64;
    for y in 0..n {
        for x in 0..n {
            let gx = px((x + 1).min(n - 1), y) - px(x.saturating_sub(1), y);
            let gy = px(x, (y + 1).min(n - 1)) - px(x, y.saturating_sub(1));
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let b = (gy.atan2(gx) + std::f64::consts::PI) / std::f64::consts::TAU * ORIENTATION_BINS as f64 - 0.5;
            let b0 = b.floor();
            let wb = b - b0;
            let b0 = (b0 as i64).rem_euclid(ORIENTATION_BINS as i64) as usize;
            let b1 = (b0 + 1) % ORIENTATION_BINS;
            let fx = (x as f64 + 0.5) / cell - 0.5;
            let fy = (y as f64 + 0.5) / cell - 0.5;
            let (cx0, cy0) = (fx.floor(), fy.floor());
            let (wx, wy) = (fx - cx0, fy - cy0);
            for (cy, wy) in [(cy0, 1.0 - wy), (cy0 + 1.0, wy)] {
                for (cx, wx) in [(cx0, 1.0 - wx), (cx0 + 1.0, wx)] {
                    if cx < 0.0 || cy < 0.0 || cx >= g as f64 || cy >= g as f64 {
                        continue;
                    }
                    let base = ((cy as usize) * g + cx as usize) * ORIENTATION_BINS;
                    let w = mag * wx * wy;
                    hist[base + b0] += w * (1.0 - wb);
                    hist[base + b1] += w * wb;
                }
            }
        }
    }

    let energy: Vec<f64> =
        hist.chunks(ORIENTATION_BINS).map(|h| h.iter().map(|v| v * v).sum::<f64>()).collect();
    // the floor keeps near-empty regions from being blown up to full contrast
    let floor = 0.1 * energy.iter().sum::<f64>() / energy.len() as f64 + 1e-12;
    let mut out = Vec::with_capacity(feature_dim(n));
    let detrended = detrend(patch);
    for cy in 0..g {
        for cx in 0..g {
            let (mut e, mut k) = (0.0, 0);
            for ny in cy.saturating_sub(1)..(cy + 2).min(g) {
                for nx in cx.saturating_sub(1)..(cx + 2).min(g) {
                    e += energy[ny * g + nx];
                    k += 1;
                }
            }
            let norm = (e / k as f64 + floor).sqrt();
            let base = (cy * g + cx) * ORIENTATION_BINS;
            out.extend(hist[base..base + ORIENTATION_BINS].iter().map(|v| v / norm));
        }
    }
    let mut mean = vec![0.0f64; g * g];
    let mut count = vec![0usize; g * g];
    for y in 0..n {
        for x in 0..n {
            let c = ((y * g) / n) * g + (x * g) / n;
            mean[c] += f64::from(detrended[y * n + x]);
            count[c] += 1;
        }
    }
    out.extend(mean.iter().zip(&count).map(|(m, &k)| m / k.max(1) as f64));
    standardized(&out)
}

fn feature_matrix(patches: &[&Patch], size: usize) -> Result<Array2<f32>> {
    let d = feature_dim(size);
    let mut x = Array2::zeros((patches.len(), d));
    for (i, p) in patches.iter().enumerate() {
        if p.size != size {
            return Err(Error::ShapeMismatch {
                expected: format!("{size}x{size} patch"),
                got: format!("{0}x{0}", p.size),
            });
        }
        x.row_mut(i).assign(&Array1::from(preprocess(p)));
    }
    Ok(x)
}

impl ReferenceClassifier {
    fn scores(&self, x: &Array2<f32>) -> Vec<[f64; NUM_CLASSES]> {
        let y = self.mlp.forward(x.view());
        y.rows()
            .into_iter()
            .map(|r| {
                let mut out = [0.0; NUM_CLASSES];
                for (o, &v) in out.iter_mut().zip(r.iter()) {
                    *o = f64::from(v);
                }
                out
            })
            .collect()
    }

    pub fn to_model_file(&self) -> Result<ModelFile> {
        let mut f = ModelFile::default();
        f.push_json("kind", &"classifier")?;
        f.push_json("config", &self.config)?;
        f.push_json("meta", &self.meta)?;
        let m = &self.mlp;
        f.push_tensor("w1", &[m.w1.nrows(), m.w1.ncols()], m.w1.iter().copied().collect());
        f.push_tensor("b1", &[m.b1.len()], m.b1.to_vec());
        f.push_tensor("w2", &[m.w2.nrows(), m.w2.ncols()], m.w2.iter().copied().collect());
        f.push_tensor("b2", &[m.b2.len()], m.b2.to_vec());
        Ok(f)
    }

    pub fn from_model_file(f: &ModelFile) -> Result<Self> {
        let kind: String = f.json("kind")?;
        if kind != "classifier" {
            return Err(Error::ModelFormat(format!("expected a classifier model, found {kind:?}")));
        }
        let config: TrainConfig = f.json("config")?;
        let meta: TrainingMeta = f.json("meta")?;
        let matrix = |name: &str| -> Result<Array2<f32>> {
            let (dims, data) = f.tensor(name)?;
            if dims.len() != 2 {
                return Err(Error::ModelFormat(format!("{name} must be rank 2")));
            }
            Array2::from_shape_vec((dims[0], dims[1]), data.to_vec()).map_err(|e| Error::ModelFormat(e.to_string()))
        };
        let vector = |name: &str| -> Result<Array1<f32>> { Ok(Array1::from(f.tensor(name)?.1.to_vec())) };
        let mlp = Mlp { w1: matrix("w1")?, b1: vector("b1")?, w2: matrix("w2")?, b2: vector("b2")? };
        let d = feature_dim(config.patch_size);
        let h = config.hidden_units;
        if mlp.w1.dim() != (h, d) || mlp.b1.len() != h || mlp.w2.dim() != (NUM_CLASSES, h) || mlp.b2.len() != NUM_CLASSES {
            return Err(Error::ModelFormat("classifier tensor shapes do not match its config".into()));
        }
        Ok(ReferenceClassifier { config, mlp, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_model_file()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_model_file(&ModelFile::load(path)?)
    }
}

impl RoiClassifier for ReferenceClassifier {
    fn patch_size(&self) -> usize {
        self.config.patch_size
    }

    fn classify(&self, patch: &Patch) -> Result<[f64; NUM_CLASSES]> {
        Ok(self.classify_batch(std::slice::from_ref(patch))?.remove(0))
    }

    fn classify_batch(&self, patches: &[Patch]) -> Result<Vec<[f64; NUM_CLASSES]>> {
        let refs: Vec<&Patch> = patches.iter().collect();
        let x = feature_matrix(&refs, self.config.patch_size)?;
        Ok(self.scores(&x))
    }
}

/// A training example; `label` indexes the 10 classes (9 = background).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatch {
    pub patch: Patch,
    pub label: usize,
}

/// Scores a model after each epoch; the returned value drives checkpointing.
pub trait EpochEvaluator {
    fn evaluate(&mut self, epoch: usize, model: &Mlp<f32>) -> Result<f64>;
}

/// Argmax accuracy on a fixed labelled set.
pub struct ValidationAccuracy {
    x: Array2<f32>,
    labels: Vec<usize>,
}

impl ValidationAccuracy {
    pub fn new(val: &[LabeledPatch], patch_size: usize) -> Result<Self> {
        if val.is_empty() {
            return Err(Error::invalid("validation set is empty"));
        }
        let refs: Vec<&Patch> = val.iter().map(|l| &l.patch).collect();
        Ok(ValidationAccuracy { x: feature_matrix(&refs, patch_size)?, labels: val.iter().map(|l| l.label).collect() })
    }
}

pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

impl EpochEvaluator for ValidationAccuracy {
    fn evaluate(&mut self, _epoch: usize, model: &Mlp<f32>) -> Result<f64> {
        let y = model.forward(self.x.view());
        let correct = y
            .rows()
            .into_iter()
            .zip(&self.labels)
            .filter(|(r, &l)| {
                let s: Vec<f64> = r.iter().map(|&v| f64::from(v)).collect();
                argmax(&s) == l
            })
            .count();
        Ok(correct as f64 / self.labels.len() as f64)
    }
}

/// Minibatch SGD on the summed per-class cross-entropy, keeping the
/// parameters of the epoch with the highest validation accuracy (ties keep
/// the earlier epoch).
pub fn train_classifier(
    train: &[LabeledPatch],
    val: &[LabeledPatch],
    config: &TrainConfig,
    seed: u64,
) -> Result<ReferenceClassifier> {
    let mut eval = ValidationAccuracy::new(val, config.patch_size)?;
    train_with_evaluator(train, &mut eval, config, seed)
}

pub fn train_with_evaluator(
    train: &[LabeledPatch],
    evaluator: &mut dyn EpochEvaluator,
    config: &TrainConfig,
    seed: u64,
) -> Result<ReferenceClassifier> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if let Some(bad) = train.iter().find(|l| l.label >= NUM_CLASSES) {
        return Err(Error::invalid(format!("label {} out of range", bad.label)));
    }
    let refs: Vec<&Patch> = train.iter().map(|l| &l.patch).collect();
    let x = feature_matrix(&refs, config.patch_size)?;
    let mut y = Array2::<f32>::zeros((train.len(), NUM_CLASSES));
    for (i, l) in train.iter().enumerate() {
        y[[i, l.label]] = 1.0;
    }
    let d = feature_dim(config.patch_size);
    let mut mlp = Mlp::<f32>::init(d, config.hidden_units, NUM_CLASSES, &mut seeds::rng(seed, "classifier-init", &[]));
    let lr = config.learning_rate as f32;

    let mut best: Option<(usize, f64, Mlp<f32>)> = None;
    let mut history = Vec::with_capacity(config.max_epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut seeds::rng(seed, "classifier-batches", &[epoch as u64]));
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let xb = x.select(ndarray::Axis(0), chunk);
            let yb = y.select(ndarray::Axis(0), chunk);
            let (loss, grads) = mlp.loss_and_gradients(xb.view(), yb.view());
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1, loss: f64::from(loss) });
            }
            loss_sum += f64::from(loss) * chunk.len() as f64;
            mlp.sgd_step(&grads, lr);
        }
        let acc = evaluator.evaluate(epoch, &mlp)?;
        history.push(EpochRecord { epoch, mean_loss: loss_sum / train.len() as f64, val_accuracy: acc });
        if best.as_ref().is_none_or(|(_, b, _)| acc > *b) {
            best = Some((epoch, acc, mlp.clone()));
        }
    }
    let (best_epoch, best_val_accuracy, mlp) = best.expect("at least one epoch");
    Ok(ReferenceClassifier {
        config: config.clone(),
        mlp,
        meta: TrainingMeta {
            seed,
            epochs_run: config.max_epochs,
            best_epoch,
            best_val_accuracy,
            train_examples: train.len(),
            history,
        },
    })
}
