//! ROI patch augmentation: flips, affine warp about the centre, intensity offset.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Patch;
use crate::error::{Error, Result};
use crate::seeds;

/// Shift, shear and zoom are fractions; rotation is in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentParams {
    pub v_flip: bool,
    pub h_flip: bool,
    pub width_shift: f64,
    pub height_shift: f64,
    pub channel_shift: f64,
    pub shear: f64,
    pub zoom: f64,
    pub rotation_deg: f64,
}

pub const MAX_FRACTION: f64 = 0.20;
pub const MAX_ROTATION_DEG: f64 = 20.0;

impl AugmentParams {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let fractions = [
            ("width_shift", self.width_shift),
            ("height_shift", self.height_shift),
            ("channel_shift", self.channel_shift),
            ("shear", self.shear),
            ("zoom", self.zoom),
        ];
        for (name, v) in fractions {
            if !(v.is_finite() && v.abs() <= MAX_FRACTION) {
                return Err(Error::invalid(format!("{name}={v} outside [-0.2, 0.2]")));
            }
        }
        if !(self.rotation_deg.is_finite() && self.rotation_deg.abs() <= MAX_ROTATION_DEG) {
            return Err(Error::invalid(format!(
                "rotation_deg={} outside [-20, 20]",
                self.rotation_deg
            )));
        }
        Ok(())
    }

    /// Uniform draw over every range, flips Bernoulli(0.5).
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut f = || rng.random_range(-MAX_FRACTION..=MAX_FRACTION);
        let (width_shift, height_shift, channel_shift, shear, zoom) = (f(), f(), f(), f(), f());
        AugmentParams {
            v_flip: rng.random_bool(0.5),
            h_flip: rng.random_bool(0.5),
            width_shift,
            height_shift,
            channel_shift,
            shear,
            zoom,
            rotation_deg: rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG),
        }
    }

    /// Parameters of augmentation `variant` of ROI `roi_id`.
    pub fn for_variant(seed: u64, roi_id: &str, variant: u64) -> Self {
        let mut rng = seeds::rng(seed, "augment", &[seeds::hash_str(roi_id), variant]);
        Self::sample(&mut rng)
    }
}

/// Applies `params` to `patch`. Output pixel `p` is sampled from the
/// (flipped) input at `c + M^-1 (p - c - t)`, where `c` is the patch centre,
/// `t` the shift in pixels and `M = R(rotation) * Shear * (1 + zoom)`.
pub fn augment_roi(patch: &Patch, params: &AugmentParams) -> Result<Patch> {
    params.validate()?;
    let n = patch.size;
    let last = n - 1;
    let mut flipped = patch.clone();
    if params.h_flip || params.v_flip {
        for y in 0..n {
            for x in 0..n {
                let sx = if params.h_flip { last - x } else { x };
                let sy = if params.v_flip { last - y } else { y };
                flipped.set(x, y, patch.get(sx, sy));
            }
        }
    }

    let c = last as f64 / 2.0;
    let (tx, ty) = (params.width_shift * n as f64, params.height_shift * n as f64);
    let s = 1.0 + params.zoom;
    let th = params.rotation_deg.to_radians();
    let (sin, cos) = th.sin_cos();
    // M = R * [[1, shear], [0, 1]] * s
    let m = [[cos * s, (cos * params.shear - sin) * s], [sin * s, (sin * params.shear + cos) * s]];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];

    let mut out = Patch::filled(n, 0.0);
    for y in 0..n {
        for x in 0..n {
            let dx = x as f64 - c - tx;
            let dy = y as f64 - c - ty;
            let sx = c + inv[0][0] * dx + inv[0][1] * dy;
            let sy = c + inv[1][0] * dx + inv[1][1] * dy;
            let v = f64::from(flipped.sample(sx, sy)) + params.channel_shift;
            out.set(x, y, v.clamp(0.0, 1.0) as f32);
        }
    }
    Ok(out)
}
