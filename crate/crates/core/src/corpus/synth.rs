//! Deterministic synthetic chest-radiograph corpus.
//!
//! Each patient carries one (occasionally two) devices that persist across
//! their exams. Every frontal image renders a smooth chest-like background,
//! unrelated radio-opaque clutter (electrodes, wires), the device glyphs and
//! additive noise. Quality grades are imposed by construction: NR blurs the
//! device and lowers its contrast, OL superimposes distractors or truncates
//! the device at the image margin.

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::device::DeviceType;
use super::glyph::{device_opacity, native_length_to_diameter, size_range_mm};
use super::image::Radiograph;
use super::manifest::{
    CorpusManifest, Degradations, Exam, ImageRecord, Patient, ProjectionParams, Provenance,
    QualityGrade, RoiAnnotation, View, MANIFEST_VERSION,
};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeMix {
    pub id: f64,
    pub nr: f64,
    pub ol: f64,
    pub nr_ol: f64,
}

impl Default for GradeMix {
    fn default() -> Self {
        GradeMix {
            id: 0.76,
            nr: 0.12,
            ol: 0.10,
            nr_ol: 0.02,
        }
    }
}

impl GradeMix {
    pub fn all_id() -> Self {
        GradeMix {
            id: 1.0,
            nr: 0.0,
            ol: 0.0,
            nr_ol: 0.0,
        }
    }

    fn weights(&self) -> [(QualityGrade, f64); 4] {
        [
            (QualityGrade::Id, self.id),
            (QualityGrade::Nr, self.nr),
            (QualityGrade::Ol, self.ol),
            (QualityGrade::NrOl, self.nr_ol),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_patients: usize,
    /// Inclusive range.
    pub exams_per_patient: [usize; 2],
    /// Frontal images per exam, inclusive range.
    pub images_per_exam: [usize; 2],
    /// Probability that a patient carries a second device of another type.
    pub second_device_prob: f64,
    /// Relative weight per device type; missing types get weight zero.
    pub class_mix: BTreeMap<DeviceType, f64>,
    pub grade_mix: GradeMix,
    /// Probability that an exam also contains a lateral view.
    pub lateral_fraction: f64,
    pub width_px: u32,
    pub height_px: u32,
    /// Per-exam pixel spacing range, mm/pixel.
    pub pixel_spacing_mm: [f64; 2],
    /// Per-exam additive noise standard deviation range.
    pub noise_sigma: [f64; 2],
    /// Unrelated radio-opaque objects per image, inclusive range.
    pub clutter_per_image: [usize; 2],
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_patients: 100,
            exams_per_patient: [1, 2],
            images_per_exam: [1, 2],
            second_device_prob: 0.05,
            class_mix: DeviceType::ALL.iter().map(|&t| (t, 1.0)).collect(),
            grade_mix: GradeMix::default(),
            lateral_fraction: 0.3,
            width_px: 320,
            height_px: 320,
            pixel_spacing_mm: [0.8, 1.2],
            noise_sigma: [0.01, 0.03],
            clutter_per_image: [1, 4],
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.class_mix.values().any(|w| !w.is_finite() || *w < 0.0)
            || self.class_mix.values().sum::<f64>() <= 0.0
        {
            return bad("class_mix must be nonnegative with at least one positive weight");
        }
        let g = self.grade_mix.weights();
        if g.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) || g.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
            return bad("grade_mix must be nonnegative with at least one positive weight");
        }
        for (name, r) in [
            ("exams_per_patient", self.exams_per_patient),
            ("images_per_exam", self.images_per_exam),
        ] {
            if r[0] == 0 || r[0] > r[1] {
                return Err(Error::Config(format!("{name} must be a nonempty range >= 1")));
            }
        }
        if self.clutter_per_image[0] > self.clutter_per_image[1] {
            return bad("clutter_per_image range is inverted");
        }
        let [s0, s1] = self.pixel_spacing_mm;
        if !(s0 > 0.0 && s0 <= s1 && s1.is_finite()) {
            return bad("pixel_spacing_mm must be a positive range");
        }
        let [n0, n1] = self.noise_sigma;
        if !(n0 >= 0.0 && n0 <= n1 && n1.is_finite()) {
            return bad("noise_sigma must be a nonnegative range");
        }
        if !(0.0..=1.0).contains(&self.lateral_fraction) || !(0.0..=1.0).contains(&self.second_device_prob) {
            return bad("probabilities must lie in [0, 1]");
        }
        // the smallest field of view must fit two of the largest devices
        let fov = f64::from(self.width_px.min(self.height_px)) * s0;
        if fov < 160.0 {
            return Err(Error::Config(format!(
                "field of view {fov:.0} mm is too small; need at least 160 mm"
            )));
        }
        Ok(())
    }

    fn type_weights(&self) -> Vec<(DeviceType, f64)> {
        DeviceType::ALL
            .iter()
            .map(|&t| (t, self.class_mix.get(&t).copied().unwrap_or(0.0)))
            .collect()
    }
}

pub struct SyntheticCorpus {
    pub manifest: CorpusManifest,
    /// Pixel data keyed by image id.
    pub images: BTreeMap<String, Radiograph>,
}

fn pick_weighted<T: Copy>(rng: &mut ChaCha8Rng, items: &[(T, f64)]) -> T {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut x = rng.random::<f64>() * total;
    for &(item, w) in items {
        if w <= 0.0 {
            continue;
        }
        if x < w {
            return item;
        }
        x -= w;
    }
    items.iter().rev().find(|(_, w)| *w > 0.0).unwrap().0
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn uniform_usize(rng: &mut ChaCha8Rng, r: [usize; 2]) -> usize {
    rng.random_range(r[0]..=r[1])
}

/// Persistent per-patient device.
#[derive(Debug, Clone, Copy)]
struct ImplantedDevice {
    device_type: DeviceType,
    width_mm: f64,
    height_mm: f64,
    /// Preferred centre as a fraction of the field of view.
    anchor: (f64, f64),
}

struct ExamSettings {
    spacing: f64,
    noise_sigma: f64,
}

/// Mutable intensity canvas in f64.
struct Canvas {
    w: usize,
    h: usize,
    spacing: f64,
    px: Vec<f64>,
}

/// Opacity layer over a pixel rectangle of the canvas.
struct Layer {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    alpha: Vec<f64>,
}

const SUPERSAMPLE: usize = 3;

impl Canvas {
    /// Rasterises an opacity field given in mm over `rect_mm` (x0, y0, x1, y1)
    /// with 3x3 supersampling.
    fn render_layer(&self, rect_mm: (f64, f64, f64, f64), margin_px: usize, f: impl Fn(f64, f64) -> f64) -> Option<Layer> {
        let s = self.spacing;
        let x0 = ((rect_mm.0 / s).floor() as i64 - margin_px as i64).max(0) as usize;
        let y0 = ((rect_mm.1 / s).floor() as i64 - margin_px as i64).max(0) as usize;
        let x1 = (((rect_mm.2 / s).ceil() as i64 + margin_px as i64).max(0) as usize).min(self.w);
        let y1 = (((rect_mm.3 / s).ceil() as i64 + margin_px as i64).max(0) as usize).min(self.h);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        let (w, h) = (x1 - x0, y1 - y0);
        let mut alpha = vec![0.0; w * h];
        let n = SUPERSAMPLE as f64;
        for j in 0..h {
            for i in 0..w {
                let mut acc = 0.0;
                for sj in 0..SUPERSAMPLE {
                    for si in 0..SUPERSAMPLE {
                        let xm = ((x0 + i) as f64 + (si as f64 + 0.5) / n) * s;
                        let ym = ((y0 + j) as f64 + (sj as f64 + 0.5) / n) * s;
                        acc += f(xm, ym);
                    }
                }
                alpha[j * w + i] = acc / (n * n);
            }
        }
        Some(Layer { x0, y0, w, h, alpha })
    }

    fn composite(&mut self, layer: &Layer, brightness: f64, contrast: f64) {
        for j in 0..layer.h {
            for i in 0..layer.w {
                let a = (layer.alpha[j * layer.w + i] * contrast).clamp(0.0, 1.0);
                if a == 0.0 {
                    continue;
                }
                let idx = (layer.y0 + j) * self.w + layer.x0 + i;
                self.px[idx] = self.px[idx] * (1.0 - a) + brightness * a;
            }
        }
    }
}

fn gaussian_blur(layer: &mut Layer, sigma_px: f64) {
    if sigma_px <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma_px).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma_px * sigma_px)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let (w, h) = (layer.w as i64, layer.h as i64);
    let mut tmp = vec![0.0; layer.alpha.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let xx = x + ki as i64 - radius;
                if (0..w).contains(&xx) {
                    acc += k * layer.alpha[(y * w + xx) as usize];
                }
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let yy = y + ki as i64 - radius;
                if (0..h).contains(&yy) {
                    acc += k * tmp[(yy * w + x) as usize];
                }
            }
            layer.alpha[(y * w + x) as usize] = acc;
        }
    }
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// 1 inside the ellipse, 0 outside, with a soft rim.
fn soft_ellipse(nx: f64, ny: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> f64 {
    let r = (((nx - cx) / rx).powi(2) + ((ny - cy) / ry).powi(2)).sqrt();
    1.0 - smoothstep(0.85, 1.1, r)
}

fn render_background(canvas: &mut Canvas, view: View, rng: &mut ChaCha8Rng) -> f64 {
    let level = uniform(rng, 0.12, 0.25);
    let rib_period = uniform(rng, 18.0, 28.0);
    let rib_phase = uniform(rng, 0.0, std::f64::consts::TAU);
    let shift = (uniform(rng, -0.03, 0.03), uniform(rng, -0.03, 0.03));
    let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                uniform(rng, 0.0, 1.0),
                uniform(rng, 0.0, 1.0),
                uniform(rng, 0.08, 0.2),
                uniform(rng, -0.035, 0.035),
            )
        })
        .collect();
    let (w, h) = (canvas.w, canvas.h);
    let wm = w as f64 * canvas.spacing;
    for y in 0..h {
        for x in 0..w {
            let nx = (x as f64 + 0.5) / w as f64 - shift.0;
            let ny = (y as f64 + 0.5) / h as f64 - shift.1;
            let mut v = level + 0.12 * soft_ellipse(nx, ny, 0.5, 0.55, 0.47, 0.55);
            match view {
                View::Frontal => {
                    let lungs = soft_ellipse(nx, ny, 0.31, 0.45, 0.16, 0.3)
                        + soft_ellipse(nx, ny, 0.69, 0.45, 0.16, 0.3);
                    v -= 0.08 * lungs;
                    v += 0.15 * soft_ellipse(nx, ny, 0.54, 0.62, 0.16, 0.16);
                    v += 0.08 * soft_ellipse(nx, ny, 0.5, 0.3, 0.07, 0.3);
                    let xm = (nx - 0.5) * wm;
                    let ym = ny * wm;
                    let rib = (std::f64::consts::TAU * (ym + 0.004 * xm * xm) / rib_period + rib_phase).sin();
                    v += 0.04 * lungs * (0.5 + 0.5 * rib).powi(4);
                }
                View::Lateral => {
                    v -= 0.08 * soft_ellipse(nx, ny, 0.45, 0.45, 0.3, 0.32);
                    v += 0.14 * soft_ellipse(nx, ny, 0.78, 0.5, 0.06, 0.5);
                    v += 0.12 * soft_ellipse(nx, ny, 0.4, 0.63, 0.18, 0.15);
                }
            }
            for &(bx, by, bs, amp) in &blobs {
                let d2 = (nx - bx).powi(2) + (ny - by).powi(2);
                v += amp * (-d2 / (2.0 * bs * bs)).exp();
            }
            canvas.px[y * w + x] = v;
        }
    }
    level
}

fn seg_dist_mm(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((px - a.0 - t * dx).powi(2) + (py - a.1 - t * dy).powi(2)).sqrt()
}

/// Draws a straight wire segment.
fn draw_wire(canvas: &mut Canvas, a: (f64, f64), b: (f64, f64), thickness: f64, opacity: f64) {
    let half = thickness / 2.0;
    let rect = (
        a.0.min(b.0) - half,
        a.1.min(b.1) - half,
        a.0.max(b.0) + half,
        a.1.max(b.1) + half,
    );
    if let Some(layer) = canvas.render_layer(rect, 1, |x, y| {
        if seg_dist_mm(x, y, a, b) <= half {
            opacity
        } else {
            0.0
        }
    }) {
        canvas.composite(&layer, 0.95, 1.0);
    }
}

/// Draws an ECG-electrode-like ring with a centre stud.
fn draw_electrode(canvas: &mut Canvas, c: (f64, f64), radius: f64, opacity: f64) {
    let rect = (c.0 - radius, c.1 - radius, c.0 + radius, c.1 + radius);
    let inner = radius - 1.3;
    if let Some(layer) = canvas.render_layer(rect, 1, |x, y| {
        let d = ((x - c.0).powi(2) + (y - c.1).powi(2)).sqrt();
        if (inner..=radius).contains(&d) || d <= 1.6 {
            opacity
        } else {
            0.0
        }
    }) {
        canvas.composite(&layer, 0.95, 1.0);
    }
}

fn random_point(rng: &mut ChaCha8Rng, wm: f64, hm: f64) -> (f64, f64) {
    (uniform(rng, 0.0, wm), uniform(rng, 0.0, hm))
}

fn draw_clutter(canvas: &mut Canvas, rng: &mut ChaCha8Rng, count: usize) {
    let wm = canvas.w as f64 * canvas.spacing;
    let hm = canvas.h as f64 * canvas.spacing;
    for _ in 0..count {
        match rng.random_range(0..3) {
            0 => {
                let c = random_point(rng, wm, hm);
                let r = uniform(rng, 5.0, 7.5);
                let op = uniform(rng, 0.5, 0.8);
                draw_electrode(canvas, c, r, op);
                // lead wire off the electrode
                let end = random_point(rng, wm, hm);
                draw_wire(canvas, c, end, uniform(rng, 0.8, 1.4), uniform(rng, 0.3, 0.5));
            }
            1 => {
                let a = random_point(rng, wm, hm);
                let b = random_point(rng, wm, hm);
                let mid = random_point(rng, wm, hm);
                let t = uniform(rng, 0.8, 2.0);
                let op = uniform(rng, 0.4, 0.7);
                draw_wire(canvas, a, mid, t, op);
                draw_wire(canvas, mid, b, t, op);
            }
            _ => {
                // sternal wire loop pair
                let c = (uniform(rng, 0.4 * wm, 0.6 * wm), uniform(rng, 0.2 * hm, 0.7 * hm));
                let op = uniform(rng, 0.6, 0.9);
                draw_electrode(canvas, (c.0 - 3.0, c.1), 3.2, op);
                draw_electrode(canvas, (c.0 + 3.0, c.1), 3.2, op);
            }
        }
    }
}

struct PlacedDevice {
    device: ImplantedDevice,
    /// Full glyph rectangle in mm (may extend past the image when truncated).
    glyph: (f64, f64, f64, f64),
    /// Annotated, visible rectangle.
    roi: BoundingBox,
    truncated: bool,
    projection: Option<ProjectionParams>,
}

fn overlaps(a: &BoundingBox, b: &BoundingBox, gap: f64) -> bool {
    a.x_min() - gap < b.x_max() && b.x_min() - gap < a.x_max() && a.y_min() - gap < b.y_max() && b.y_min() - gap < a.y_max()
}

#[allow(clippy::too_many_arguments)]
fn place_device(
    rng: &mut ChaCha8Rng,
    device: ImplantedDevice,
    dims: (f64, f64),
    wm: f64,
    hm: f64,
    truncate: bool,
    taken: &[BoundingBox],
) -> Option<(BoundingBox, (f64, f64, f64, f64))> {
    let (gw, gh) = dims;
    for attempt in 0..200 {
        // fall back to anywhere in the field after repeated collisions
        let anchored = attempt < 40;
        if truncate {
            let tau = uniform(rng, 0.1, 0.2);
            let edge = rng.random_range(0..4);
            let (full_w, full_h) = match edge {
                0 | 1 => (gw / (1.0 - tau), gh),
                _ => (gw, gh / (1.0 - tau)),
            };
            let (x0, y0) = match edge {
                0 => (-tau * full_w, uniform(rng, 0.15 * hm, 0.85 * hm - gh)),
                1 => (wm - (1.0 - tau) * full_w, uniform(rng, 0.15 * hm, 0.85 * hm - gh)),
                2 => (uniform(rng, 0.15 * wm, 0.85 * wm - gw), -tau * full_h),
                _ => (uniform(rng, 0.15 * wm, 0.85 * wm - gw), hm - (1.0 - tau) * full_h),
            };
            let glyph = (x0, y0, x0 + full_w, y0 + full_h);
            let roi = BoundingBox::new(glyph.0.max(0.0), glyph.1.max(0.0), glyph.2.min(wm), glyph.3.min(hm)).ok()?;
            if !taken.iter().any(|t| overlaps(t, &roi, 3.0)) {
                return Some((roi, glyph));
            }
            continue;
        }
        let (cx, cy) = if anchored {
            (
                device.anchor.0 * wm + uniform(rng, -8.0, 8.0),
                device.anchor.1 * hm + uniform(rng, -8.0, 8.0),
            )
        } else {
            (uniform(rng, 0.0, wm), uniform(rng, 0.0, hm))
        };
        let cx = cx.clamp(gw / 2.0 + 2.0, wm - gw / 2.0 - 2.0);
        let cy = cy.clamp(gh / 2.0 + 2.0, hm - gh / 2.0 - 2.0);
        let glyph = (cx - gw / 2.0, cy - gh / 2.0, cx + gw / 2.0, cy + gh / 2.0);
        let roi = BoundingBox::new(glyph.0, glyph.1, glyph.2, glyph.3).ok()?;
        if !taken.iter().any(|t| overlaps(t, &roi, 3.0)) {
            return Some((roi, glyph));
        }
    }
    None
}

fn draw_device(canvas: &mut Canvas, placed: &PlacedDevice, blur_sigma_mm: Option<f64>, contrast: f64, brightness: f64) {
    let g = placed.glyph;
    let (gw, gh) = (g.2 - g.0, g.3 - g.1);
    let t = placed.device.device_type;
    let margin = blur_sigma_mm
        .map(|s| (3.0 * s / canvas.spacing).ceil() as usize + 1)
        .unwrap_or(1);
    let layer = canvas.render_layer(g, margin, |x, y| {
        let u = (x - g.0) / gw;
        let v = (y - g.1) / gh;
        if (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) {
            device_opacity(t, u, v)
        } else {
            0.0
        }
    });
    if let Some(mut layer) = layer {
        if let Some(sigma) = blur_sigma_mm {
            gaussian_blur(&mut layer, sigma / canvas.spacing);
        }
        canvas.composite(&layer, brightness, contrast);
    }
}

/// Superimposes 1-2 radio-opaque objects across the ROI; returns the count.
fn draw_distractors(canvas: &mut Canvas, rng: &mut ChaCha8Rng, roi: &BoundingBox) -> u32 {
    let n = rng.random_range(1..=2);
    let (cx, cy) = roi.center();
    let span = roi.width().max(roi.height());
    for _ in 0..n {
        if rng.random_bool(0.6) {
            let angle = uniform(rng, 0.0, std::f64::consts::PI);
            let off = (uniform(rng, -0.25, 0.25) * roi.width(), uniform(rng, -0.25, 0.25) * roi.height());
            let (dx, dy) = (angle.cos() * span, angle.sin() * span);
            let a = (cx + off.0 - dx, cy + off.1 - dy);
            let b = (cx + off.0 + dx, cy + off.1 + dy);
            draw_wire(canvas, a, b, uniform(rng, 1.5, 3.0), uniform(rng, 0.55, 0.85));
        } else {
            let c = (
                uniform(rng, roi.x_min(), roi.x_max()),
                uniform(rng, roi.y_min(), roi.y_max()),
            );
            draw_electrode(canvas, c, uniform(rng, 5.0, 8.0), uniform(rng, 0.6, 0.9));
        }
    }
    n
}

struct Counters {
    acc: usize,
    image: usize,
    roi: usize,
}

struct ImageJob<'a> {
    view: View,
    exam: &'a ExamSettings,
    devices: &'a [ImplantedDevice],
}

fn render_image(cfg: &CorpusConfig, job: &ImageJob<'_>, image_index: usize, counters: &mut Counters) -> (Radiograph, ImageRecord, Vec<RoiAnnotation>) {
    let mut rng = seeds::rng(cfg.seed, "image", &[image_index as u64]);
    let (w, h) = (cfg.width_px as usize, cfg.height_px as usize);
    let spacing = job.exam.spacing;
    let wm = w as f64 * spacing;
    let hm = h as f64 * spacing;
    let mut canvas = Canvas {
        w,
        h,
        spacing,
        px: vec![0.0; w * h],
    };
    let level = render_background(&mut canvas, job.view, &mut rng);
    let clutter = uniform_usize(&mut rng, cfg.clutter_per_image);
    draw_clutter(&mut canvas, &mut rng, clutter);

    counters.image += 1;
    let image_id = format!("IMG{:06}", counters.image);
    let grade_weights = cfg.grade_mix.weights();

    let mut taken: Vec<BoundingBox> = Vec::new();
    let mut annotations = Vec::new();
    for &device in job.devices {
        let grade = pick_weighted(&mut rng, &grade_weights);
        let frontal = job.view == View::Frontal;
        let truncate = frontal && grade.has_ol() && rng.random_bool(0.5);

        let (mut dims, projection) = (
            (device.width_mm, device.height_mm),
            if frontal {
                None
            } else {
                let f = uniform(&mut rng, 0.35, 1.0);
                let en_face = rng.random_bool(0.65);
                Some(ProjectionParams {
                    foreshortening: f,
                    en_face,
                    length_to_diameter: native_length_to_diameter(device.device_type) * f,
                })
            },
        );
        if let Some(p) = projection {
            dims.0 *= p.foreshortening;
            if !p.en_face {
                dims.1 *= 0.6;
            }
        }
        let Some((roi, glyph)) = place_device(&mut rng, device, dims, wm, hm, truncate, &taken) else {
            continue;
        };
        taken.push(roi);
        let placed = PlacedDevice {
            device,
            glyph,
            roi,
            truncated: truncate,
            projection,
        };

        let mut deg = Degradations {
            truncated: truncate,
            ..Default::default()
        };
        let mut contrast = 1.0;
        if grade.has_nr() {
            let sigma = uniform(&mut rng, 1.2, 2.5);
            contrast = uniform(&mut rng, 0.3, 0.55);
            deg.blur_sigma_mm = Some(sigma);
            deg.contrast_factor = Some(contrast);
        }
        let brightness = uniform(&mut rng, 0.88, 0.98);
        draw_device(&mut canvas, &placed, deg.blur_sigma_mm, contrast, brightness);
        if grade.has_ol() && !truncate {
            deg.distractors = draw_distractors(&mut canvas, &mut rng, &placed.roi);
        }

        counters.roi += 1;
        annotations.push(RoiAnnotation {
            roi_id: format!("ROI{:06}", counters.roi),
            image_id: image_id.clone(),
            bbox: placed.roi,
            device_type: device.device_type,
            grade,
            view: job.view,
            truncated: placed.truncated,
            projection: placed.projection,
            degradations: Some(deg),
        });
    }

    let normal = Normal::new(0.0, job.exam.noise_sigma.max(1e-12)).expect("finite sigma");
    let pixels: Vec<f32> = canvas
        .px
        .iter()
        .map(|&v| {
            let n = if job.exam.noise_sigma > 0.0 {
                normal.sample(&mut rng)
            } else {
                0.0
            };
            (v + n).clamp(0.0, 1.0) as f32
        })
        .collect();
    let mut radiograph = Radiograph {
        width: w,
        height: h,
        spacing_mm: spacing,
        pixels,
    };
    radiograph.quantize_u16();

    let record = ImageRecord {
        image_id: image_id.clone(),
        view: job.view,
        width_px: cfg.width_px,
        height_px: cfg.height_px,
        pixel_spacing_mm: spacing,
        pixel_file: format!("images/{image_id}.pgm"),
        provenance: Provenance::Synthetic {
            seed: cfg.seed,
            noise_sigma: job.exam.noise_sigma,
            background_level: level,
        },
    };
    (radiograph, record, annotations)
}

fn draw_device_dims(rng: &mut ChaCha8Rng, t: DeviceType) -> (f64, f64) {
    let (lo, hi) = size_range_mm(t);
    let long = uniform(rng, lo, hi);
    let aspect = uniform(rng, 1.0, 1.25);
    let short = (long / aspect).max(15.5);
    if rng.random_bool(0.5) {
        (long, short)
    } else {
        (short, long)
    }
}

/// Generates manifest and pixel data; a pure function of the configuration
/// (including its seed).
pub fn generate_synthetic_corpus(cfg: &CorpusConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = seeds::rng(cfg.seed, "corpus-structure", &[]);
    let type_weights = cfg.type_weights();
    let epoch = NaiveDate::from_ymd_opt(1993, 3, 1).expect("valid date");

    let mut manifest = CorpusManifest {
        manifest_version: MANIFEST_VERSION,
        ..Default::default()
    };
    let mut images = BTreeMap::new();
    let mut counters = Counters {
        acc: 0,
        image: 0,
        roi: 0,
    };

    for p in 0..cfg.n_patients {
        let mrn = format!("MRN{:05}", p + 1);
        let first = pick_weighted(&mut rng, &type_weights);
        let mut types = vec![first];
        let others: Vec<(DeviceType, f64)> = type_weights.iter().copied().filter(|(t, w)| *t != first && *w > 0.0).collect();
        if !others.is_empty() && rng.random_bool(cfg.second_device_prob) {
            types.push(pick_weighted(&mut rng, &others));
        }
        let devices: Vec<ImplantedDevice> = types
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let (width_mm, height_mm) = draw_device_dims(&mut rng, t);
                let anchor = if k == 0 {
                    (uniform(&mut rng, 0.35, 0.6), uniform(&mut rng, 0.35, 0.7))
                } else {
                    (uniform(&mut rng, 0.62, 0.75), uniform(&mut rng, 0.3, 0.7))
                };
                ImplantedDevice {
                    device_type: t,
                    width_mm,
                    height_mm,
                    anchor,
                }
            })
            .collect();

        let n_exams = uniform_usize(&mut rng, cfg.exams_per_patient);
        let mut days: Vec<u64> = (0..n_exams).map(|_| rng.random_range(0..10_500u64)).collect();
        days.sort_unstable();

        let mut exams = Vec::new();
        for day in days {
            counters.acc += 1;
            let acc = format!("ACC{:06}", counters.acc);
            let settings = ExamSettings {
                spacing: uniform(&mut rng, cfg.pixel_spacing_mm[0], cfg.pixel_spacing_mm[1]),
                noise_sigma: uniform(&mut rng, cfg.noise_sigma[0], cfg.noise_sigma[1]),
            };
            let n_frontal = uniform_usize(&mut rng, cfg.images_per_exam);
            let with_lateral = rng.random_bool(cfg.lateral_fraction);
            let mut views = vec![View::Frontal; n_frontal];
            if with_lateral {
                views.push(View::Lateral);
            }
            let mut image_ids = Vec::new();
            for view in views {
                let job = ImageJob {
                    view,
                    exam: &settings,
                    devices: &devices,
                };
                let index = counters.image;
                let (pixels, record, annotations) = render_image(cfg, &job, index, &mut counters);
                image_ids.push(record.image_id.clone());
                images.insert(record.image_id.clone(), pixels);
                manifest.images.push(record);
                manifest.annotations.extend(annotations);
            }
            let date = epoch.checked_add_days(Days::new(day)).expect("date in range");
            exams.push(Exam {
                acc,
                timestamp: date.format("%Y-%m-%d").to_string(),
                image_ids,
            });
        }
        manifest.patients.push(Patient { mrn, exams });
    }
    manifest.validate()?;
    Ok(SyntheticCorpus { manifest, images })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> CorpusConfig {
        CorpusConfig {
            n_patients: 10,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic_corpus(&small(7)).unwrap();
        let b = generate_synthetic_corpus(&small(7)).unwrap();
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.images, b.images);
        let c = generate_synthetic_corpus(&small(8)).unwrap();
        assert_ne!(a.manifest, c.manifest);
    }

    #[test]
    fn degenerate_class_mix_yields_single_type() {
        let mut cfg = small(3);
        cfg.class_mix = [(DeviceType::Papm1, 1.0)].into_iter().collect();
        let c = generate_synthetic_corpus(&cfg).unwrap();
        assert!(!c.manifest.annotations.is_empty());
        assert!(c.manifest.annotations.iter().all(|a| a.device_type == DeviceType::Papm1));
    }

    #[test]
    fn zero_class_mix_is_a_config_error() {
        let mut cfg = small(1);
        cfg.class_mix = BTreeMap::new();
        assert!(matches!(generate_synthetic_corpus(&cfg), Err(Error::Config(_))));
        let mut cfg = small(1);
        cfg.class_mix.values_mut().for_each(|w| *w = 0.0);
        assert!(generate_synthetic_corpus(&cfg).is_err());
    }

    #[test]
    fn tiny_field_of_view_is_rejected() {
        let mut cfg = small(1);
        cfg.width_px = 64;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn grades_match_applied_degradations() {
        let c = generate_synthetic_corpus(&small(11)).unwrap();
        for a in &c.manifest.annotations {
            let d = a.degradations.unwrap();
            assert_eq!(a.grade.has_nr(), d.blur_sigma_mm.is_some(), "{}", a.roi_id);
            assert_eq!(a.grade.has_ol(), d.distractors > 0 || d.truncated, "{}", a.roi_id);
            assert_eq!(a.truncated, d.truncated);
        }
    }

    #[test]
    fn frontal_rois_stay_in_the_filter_band() {
        let c = generate_synthetic_corpus(&CorpusConfig {
            n_patients: 40,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        for a in c.manifest.annotations.iter().filter(|a| a.view == View::Frontal) {
            let (w, h) = (a.bbox.width(), a.bbox.height());
            assert!((15.0..=60.0).contains(&w) && (15.0..=60.0).contains(&h), "{} {w}x{h}", a.roi_id);
            let aspect = w / h;
            assert!((0.7..=1.4).contains(&aspect), "{} aspect {aspect}", a.roi_id);
        }
    }

    #[test]
    fn lateral_rois_carry_projection_params() {
        let mut cfg = small(21);
        cfg.lateral_fraction = 1.0;
        let c = generate_synthetic_corpus(&cfg).unwrap();
        let laterals: Vec<_> = c.manifest.annotations.iter().filter(|a| a.view == View::Lateral).collect();
        assert!(!laterals.is_empty());
        for a in laterals {
            let p = a.projection.unwrap();
            assert!(p.foreshortening > 0.0 && p.foreshortening <= 1.0);
            assert!(!a.truncated);
        }
    }

    #[test]
    fn pixels_are_normalised() {
        let c = generate_synthetic_corpus(&small(2)).unwrap();
        for img in c.images.values() {
            assert!(img.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
