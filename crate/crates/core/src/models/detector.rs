//! Reference proposal scorer: multi-scale sliding windows scored by
//! normalised cross-correlation against per-type mean templates.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::format::ModelFile;
use super::ProposalScorer;
use crate::corpus::{DeviceType, Patch, Radiograph};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, ScoredBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Side of the canonical window and template grid.
    pub template_size: usize,
    pub min_window_mm: f64,
    pub max_window_mm: f64,
    pub scales_per_octave: usize,
    /// Window stride as a fraction of the window side.
    pub stride_fraction: f64,
    /// Exponent applied to `(ncc + 1) / 2`; 1 gives the plain mapping.
    pub score_exponent: f64,
    /// Margin, as a fraction of each side, added around a box before it is
    /// compared. The surrounding ring makes oversized and undersized windows
    /// score worse than a tight one.
    pub context_fraction: f64,
    /// Window width/height ratios tried at every scale; the scale is the
    /// geometric mean of the two sides.
    pub aspect_ratios: Vec<f64>,
    /// Windows may start this many strides outside the image on each side.
    /// They are scored over their full extent and emitted clipped, which is
    /// how a device cut off by the image border is annotated.
    pub overhang_strides: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            template_size: 12,
            min_window_mm: 15.0,
            max_window_mm: 120.0,
            scales_per_octave: 4,
            stride_fraction: 0.25,
            score_exponent: 8.0,
            context_fraction: 0.25,
            aspect_ratios: vec![0.8, 1.0, 1.25],
            overhang_strides: 2,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.template_size >= 2
            && self.min_window_mm > 0.0
            && self.max_window_mm >= self.min_window_mm
            && self.scales_per_octave >= 1
            && self.stride_fraction > 0.0
            && self.stride_fraction <= 1.0
            && self.score_exponent > 0.0
            && self.score_exponent.is_finite()
            && (0.0..=1.0).contains(&self.context_fraction)
            && !self.aspect_ratios.is_empty()
            && self.aspect_ratios.iter().all(|a| a.is_finite() && *a > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid detector config {self:?}")))
        }
    }

    /// Window scales in mm: `min * 2^(k / scales_per_octave)` up to max.
    pub fn window_sizes_mm(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for k in 0.. {
            let s = self.min_window_mm * 2f64.powf(k as f64 / self.scales_per_octave as f64);
            if s > self.max_window_mm * (1.0 + 1e-9) {
                break;
            }
            out.push(s);
        }
        out
    }

    /// The pixel rectangle compared for a box given in pixels: the box
    /// grown by the context margin, not clamped to the image.
    pub fn context_region(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> (f64, f64, f64, f64) {
        let (mx, my) = ((x1 - x0) * self.context_fraction, (y1 - y0) * self.context_fraction);
        (x0 - mx, y0 - my, x1 + mx, y1 + my)
    }

    pub fn score_from_ncc(&self, ncc: f64) -> f64 {
        ((ncc.clamp(-1.0, 1.0) + 1.0) / 2.0).powf(self.score_exponent).clamp(0.0, 1.0)
    }
}

/// Summed-area table over pixel squares. Bilinear interpolation of the
/// table gives exact box sums at fractional coordinates for a
/// piecewise-constant image.
pub struct IntegralImage {
    w: usize,
    h: usize,
    sat: Vec<f64>,
}

impl IntegralImage {
    pub fn new(image: &Radiograph) -> Self {
        let (w, h) = (image.width, image.height);
        let mut sat = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f64::from(image.pixels[y * w + x]);
                sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
            }
        }
        IntegralImage { w, h, sat }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, self.w as f64);
        let y = y.clamp(0.0, self.h as f64);
        let x0 = (x.floor() as usize).min(self.w.saturating_sub(1));
        let y0 = (y.floor() as usize).min(self.h.saturating_sub(1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let stride = self.w + 1;
        let s = |xx: usize, yy: usize| self.sat[yy * stride + xx];
        let top = s(x0, y0) * (1.0 - fx) + s(x0 + 1, y0) * fx;
        let bottom = s(x0, y0 + 1) * (1.0 - fx) + s(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Area-averages the pixel rectangle `[x0, x1) x [y0, y1)` onto an
    /// `n x n` grid, row-major.
    pub fn resample(&self, x0: f64, y0: f64, x1: f64, y1: f64, n: usize, out: &mut Vec<f64>) {
        out.clear();
        let dx = (x1 - x0) / n as f64;
        let dy = (y1 - y0) / n as f64;
        let mut corners = vec![0.0; (n + 1) * (n + 1)];
        for j in 0..=n {
            let y = y0 + j as f64 * dy;
            for i in 0..=n {
                corners[j * (n + 1) + i] = self.at(x0 + i as f64 * dx, y);
            }
        }
        let area = dx * dy;
        for j in 0..n {
            for i in 0..n {
                let c = |ii: usize, jj: usize| corners[jj * (n + 1) + ii];
                out.push((c(i + 1, j + 1) - c(i, j + 1) - c(i + 1, j) + c(i, j)) / area);
            }
        }
    }
}

/// Area-resampled `n x n` view of `bbox_mm` (clamped to the image), the
/// representation templates and windows are compared in.
pub fn canonical_patch(image: &Radiograph, bbox_mm: &BoundingBox, n: usize) -> Result<Patch> {
    canonical_patch_with(&IntegralImage::new(image), image, bbox_mm, n)
}

pub fn canonical_patch_with(sat: &IntegralImage, image: &Radiograph, bbox_mm: &BoundingBox, n: usize) -> Result<Patch> {
    let s = image.spacing_mm;
    let bounds = BoundingBox::new(0.0, 0.0, image.width_mm(), image.height_mm())?;
    let b = bbox_mm
        .intersect(&bounds)
        .ok_or_else(|| Error::invalid("box lies entirely outside the image"))?;
    let mut v = Vec::with_capacity(n * n);
    sat.resample(b.x_min() / s, b.y_min() / s, b.x_max() / s, b.y_max() / s, n, &mut v);
    Patch::new(n, v.into_iter().map(|x| x as f32).collect())
}

/// The patch a detector compares for `bbox_mm`: its context region
/// resampled to the template grid. Area outside the image reads as zero.
/// Templates are means of these.
pub fn detector_patch(image: &Radiograph, bbox_mm: &BoundingBox, config: &DetectorConfig) -> Result<Patch> {
    let mut v = Vec::new();
    detector_view(&IntegralImage::new(image), image.spacing_mm, bbox_mm, config, &mut v);
    Patch::new(config.template_size, v.into_iter().map(|x| x as f32).collect())
}

fn detector_view(sat: &IntegralImage, spacing: f64, bbox_mm: &BoundingBox, config: &DetectorConfig, out: &mut Vec<f64>) {
    let (x0, y0, x1, y1) = config.context_region(
        bbox_mm.x_min() / spacing,
        bbox_mm.y_min() / spacing,
        bbox_mm.x_max() / spacing,
        bbox_mm.y_max() / spacing,
    );
    sat.resample(x0, y0, x1, y1, config.template_size, out);
}

/// Zero-mean, unit-norm copy; `None` for a flat signal.
pub fn standardize(v: &[f64]) -> Option<Vec<f64>> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let centred: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let norm = centred.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 1e-12 * (v.len() as f64).sqrt() {
        None
    } else {
        Some(centred.into_iter().map(|x| x / norm).collect())
    }
}

/// Normalised cross-correlation; 0 when either signal is flat.
pub fn ncc(a: &[f64], b: &[f64]) -> f64 {
    match (standardize(a), standardize(b)) {
        (Some(a), Some(b)) => a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0),
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    pub config: DetectorConfig,
    /// Mean canonical patch per represented type, row-major.
    pub templates: BTreeMap<DeviceType, Vec<f32>>,
    /// Standardised templates, rebuilt from `templates`.
    normalized: Vec<Vec<f64>>,
}

impl DetectorState {
    pub fn new(config: DetectorConfig, templates: BTreeMap<DeviceType, Vec<f32>>) -> Result<Self> {
        config.validate()?;
        let n2 = config.template_size * config.template_size;
        let mut normalized = Vec::new();
        for (t, tpl) in &templates {
            if tpl.len() != n2 {
                return Err(Error::ShapeMismatch {
                    expected: format!("{n2} template pixels"),
                    got: format!("{} for {t}", tpl.len()),
                });
            }
            let v: Vec<f64> = tpl.iter().map(|&x| f64::from(x)).collect();
            normalized.push(
                standardize(&v).ok_or_else(|| Error::invalid(format!("template for {t} is flat")))?,
            );
        }
        Ok(DetectorState { config, templates, normalized })
    }

    fn max_ncc(&self, window: &[f64]) -> f64 {
        let Some(w) = standardize(window) else {
            return 0.0;
        };
        self.normalized
            .iter()
            .map(|t| t.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>())
            .fold(-1.0, f64::max)
            .clamp(-1.0, 1.0)
    }

    /// NCC score of an arbitrary box.
    pub fn score_box(&self, image: &Radiograph, bbox_mm: &BoundingBox) -> Result<f64> {
        if self.normalized.is_empty() {
            return Err(Error::NotFitted("detector has no templates".into()));
        }
        let mut v = Vec::new();
        detector_view(&IntegralImage::new(image), image.spacing_mm, bbox_mm, &self.config, &mut v);
        Ok(self.config.score_from_ncc(self.max_ncc(&v)))
    }

    pub fn to_model_file(&self) -> Result<ModelFile> {
        let mut f = ModelFile::default();
        f.push_json("kind", &"detector")?;
        f.push_json("config", &self.config)?;
        let n = self.config.template_size;
        for (t, tpl) in &self.templates {
            f.push_tensor(&format!("template/{t}"), &[n, n], tpl.clone());
        }
        Ok(f)
    }

    pub fn from_model_file(f: &ModelFile) -> Result<Self> {
        let kind: String = f.json("kind")?;
        if kind != "detector" {
            return Err(Error::ModelFormat(format!("expected a detector model, found {kind:?}")));
        }
        let config: DetectorConfig = f.json("config")?;
        let mut templates = BTreeMap::new();
        for t in DeviceType::ALL {
            if let Ok((_, data)) = f.tensor(&format!("template/{t}")) {
                templates.insert(t, data.to_vec());
            }
        }
        Self::new(config, templates)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_model_file()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_model_file(&ModelFile::load(path)?)
    }
}

/// Window origins on the stride grid anchored at 0, extended `overhang`
/// steps past both ends, plus the origin flush with the far edge.
fn positions(extent: f64, window: f64, stride: f64, overhang: usize) -> Vec<f64> {
    let last = extent - window;
    let reach = last + overhang as f64 * stride + 1e-9;
    let mut out = Vec::new();
    let mut k = -(overhang as i64);
    loop {
        let x = k as f64 * stride;
        if x > reach {
            break;
        }
        out.push(x);
        k += 1;
    }
    if !out.iter().any(|&p| (p - last).abs() <= 1e-9) {
        out.push(last);
        out.sort_by(f64::total_cmp);
    }
    out
}

impl ProposalScorer for DetectorState {
    fn score(&self, image: &Radiograph) -> Result<Vec<ScoredBox>> {
        if self.normalized.is_empty() {
            return Err(Error::NotFitted("detector has no templates".into()));
        }
        let sat = IntegralImage::new(image);
        let s = image.spacing_mm;
        let n = self.config.template_size;
        let (wmm, hmm) = (image.width_mm(), image.height_mm());
        let mut out = Vec::new();
        let mut buf = Vec::with_capacity(n * n);
        for size in self.config.window_sizes_mm() {
            for &aspect in &self.config.aspect_ratios {
                let wpx = size * aspect.sqrt() / s;
                let hpx = size / aspect.sqrt() / s;
                if wpx > image.width as f64 || hpx > image.height as f64 {
                    continue;
                }
                let m = self.config.overhang_strides;
                let xs = positions(image.width as f64, wpx, wpx * self.config.stride_fraction, m);
                let ys = positions(image.height as f64, hpx, hpx * self.config.stride_fraction, m);
                for &y in &ys {
                    for &x in &xs {
                        let (x0, y0, x1, y1) = self.config.context_region(x, y, x + wpx, y + hpx);
                        sat.resample(x0, y0, x1, y1, n, &mut buf);
                        let score = self.config.score_from_ncc(self.max_ncc(&buf));
                        let bbox = BoundingBox::new(
                            (x * s).max(0.0),
                            (y * s).max(0.0),
                            ((x + wpx) * s).min(wmm),
                            ((y + hpx) * s).min(hmm),
                        )?;
                        out.push(ScoredBox::new(bbox, score)?);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Builds one mean template per type from canonical patches.
pub fn fit_detector(examples: &[(DeviceType, Patch)], config: &DetectorConfig) -> Result<DetectorState> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::invalid("cannot fit a detector on an empty training set"));
    }
    let n = config.template_size;
    let mut sums: BTreeMap<DeviceType, (Vec<f64>, usize)> = BTreeMap::new();
    for (t, p) in examples {
        if p.size != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n}x{n} patch"),
                got: format!("{0}x{0}", p.size),
            });
        }
        let e = sums.entry(*t).or_insert_with(|| (vec![0.0; n * n], 0));
        for (acc, &v) in e.0.iter_mut().zip(&p.pixels) {
            *acc += f64::from(v);
        }
        e.1 += 1;
    }
    let templates = sums
        .into_iter()
        .map(|(t, (sum, k))| (t, sum.into_iter().map(|v| (v / k as f64) as f32).collect()))
        .collect();
    DetectorState::new(config.clone(), templates)
}
