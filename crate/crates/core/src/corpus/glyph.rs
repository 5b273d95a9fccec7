//! Parametric device silhouettes.
//!
//! Each device type is an opacity field over the unit square of its bounding
//! box. Shapes are built from a few primitives (capsules, rings, dots) and
//! differ in silhouette and internal texture so that the nine types are
//! separable at full quality.

use super::device::DeviceType;

/// Opacity of `device` at normalised box coordinates `(u, v)` in `[0, 1]^2`.
///
/// Every glyph is symmetric under horizontal and vertical flips, so the
/// flips used by augmentation never turn one type into another: types are
/// told apart by silhouette and texture, not by orientation.
pub fn device_opacity(device: DeviceType, u: f64, v: f64) -> f64 {
    // distances from the centre lines; folding makes the symmetry exact
    let (a, b) = ((u - 0.5).abs(), (v - 0.5).abs());
    let r = a.hypot(b);
    // distance from the diagonal through the folded quadrant
    let diag = (a - b).abs() / std::f64::consts::SQRT_2;
    let within = |x: f64, lo: f64, hi: f64| (lo..=hi).contains(&x);
    match device {
        DeviceType::Llp1 => {
            // Thick X with a bright hub.
            if r <= 0.12 {
                1.0
            } else if diag <= 0.09 && a.max(b) <= 0.45 {
                0.8
            } else {
                0.0
            }
        }
        DeviceType::Llp2 => {
            // Hollow square frame.
            if within(a.max(b), 0.3, 0.45) {
                0.85
            } else {
                0.0
            }
        }
        DeviceType::Llr1 => {
            // Thick plus with bright square electrodes at the arm ends.
            let arm = (a <= 0.1 && b <= 0.45) || (b <= 0.1 && a <= 0.45);
            if arm && a.max(b) >= 0.33 {
                1.0
            } else if arm {
                0.7
            } else {
                0.0
            }
        }
        DeviceType::Llr2 => {
            // Diamond.
            if a + b <= 0.45 {
                0.75
            } else {
                0.0
            }
        }
        DeviceType::Llr3 => {
            // Square striped by three horizontal bars.
            if a <= 0.44 && (b <= 0.07 || within(b, 0.2, 0.3) || within(b, 0.38, 0.45)) {
                0.7
            } else {
                0.0
            }
        }
        DeviceType::Llr4 => {
            // Dense central body, faint diagonal antennae with end caps.
            if a.max(b) <= 0.2 {
                0.9
            } else if (a - 0.4).hypot(b - 0.4) <= 0.06 {
                0.8
            } else if diag <= 0.03 && a.max(b) <= 0.4 {
                0.45
            } else {
                0.0
            }
        }
        DeviceType::Llr5 => {
            // Square body with a 5 x 5 plaid battery pattern.
            if a <= 0.45 && b <= 0.45 {
                let cu = ((u - 0.05) / 0.18).floor().clamp(0.0, 4.0) as i64;
                let cv = ((v - 0.05) / 0.18).floor().clamp(0.0, 4.0) as i64;
                if (cu + cv) % 2 == 0 {
                    0.95
                } else {
                    0.45
                }
            } else {
                0.0
            }
        }
        DeviceType::Papm1 => {
            // Loop with a bar across its centre.
            if within(r, 0.31, 0.45) {
                0.85
            } else if a <= 0.3 && b <= 0.075 {
                1.0
            } else {
                0.0
            }
        }
        DeviceType::Erc1 => {
            // Solid disc with a lucent central well.
            if r <= 0.15 {
                0.25
            } else if r <= 0.45 {
                0.9
            } else {
                0.0
            }
        }
    }
}

/// Typical apparent length/diameter ratio of each device when seen side-on.
pub fn native_length_to_diameter(device: DeviceType) -> f64 {
    match device {
        DeviceType::Llp1 => 3.9,
        DeviceType::Llp2 => 7.0,
        DeviceType::Llr1 => 6.0,
        DeviceType::Llr2 => 5.0,
        DeviceType::Llr3 => 7.5,
        DeviceType::Llr4 => 8.0,
        DeviceType::Llr5 => 6.5,
        DeviceType::Papm1 => 5.0,
        DeviceType::Erc1 => 1.5,
    }
}

/// Range of the larger box side in mm; always within the 15-60 mm band.
pub fn size_range_mm(device: DeviceType) -> (f64, f64) {
    match device {
        DeviceType::Llp1 => (24.0, 30.0),
        DeviceType::Llp2 => (32.0, 42.0),
        DeviceType::Llr1 => (36.0, 46.0),
        DeviceType::Llr2 => (30.0, 38.0),
        DeviceType::Llr3 => (34.0, 44.0),
        DeviceType::Llr4 => (38.0, 50.0),
        DeviceType::Llr5 => (32.0, 42.0),
        DeviceType::Papm1 => (22.0, 30.0),
        DeviceType::Erc1 => (20.0, 26.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster(t: DeviceType, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let u = (i as f64 + 0.5) / n as f64;
                let v = (j as f64 + 0.5) / n as f64;
                out.push(device_opacity(t, u, v));
            }
        }
        out
    }

    #[test]
    fn glyphs_are_nonempty_and_pairwise_distinct() {
        let n = 24;
        let rasters: Vec<Vec<f64>> = DeviceType::ALL.iter().map(|&t| raster(t, n)).collect();
        for (i, r) in rasters.iter().enumerate() {
            let covered = r.iter().filter(|&&a| a > 0.0).count();
            assert!(covered > n * n / 10, "{:?} too sparse", DeviceType::ALL[i]);
        }
        for i in 0..rasters.len() {
            for j in (i + 1)..rasters.len() {
                let diff: f64 = rasters[i]
                    .iter()
                    .zip(&rasters[j])
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
                    / (n * n) as f64;
                assert!(diff > 0.08, "{i} vs {j}: {diff}");
            }
        }
    }

    #[test]
    fn glyphs_survive_flips() {
        // an even grid keeps samples off the shape boundaries
        let n = 32;
        for t in DeviceType::ALL {
            let r = raster(t, n);
            for j in 0..n {
                for i in 0..n {
                    let here = r[j * n + i];
                    assert_eq!(here, r[j * n + (n - 1 - i)], "{t} h-flip at {i},{j}");
                    assert_eq!(here, r[(n - 1 - j) * n + i], "{t} v-flip at {i},{j}");
                }
            }
        }
    }

    #[test]
    fn size_ranges_inside_filter_band() {
        for t in DeviceType::ALL {
            let (lo, hi) = size_range_mm(t);
            assert!(lo >= 15.0 && hi <= 60.0 && lo < hi);
        }
    }
}
