//! Grayscale pixel grids, portable-graymap I/O and ROI patch extraction.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::geometry::BoundingBox;

/// A grayscale radiograph with intensities in `[0, 1]` and isotropic spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Radiograph {
    pub width: usize,
    pub height: usize,
    /// mm per pixel
    pub spacing_mm: f64,
    pub pixels: Vec<f32>,
}

impl Radiograph {
    pub fn filled(width: usize, height: usize, spacing_mm: f64, value: f32) -> Self {
        Radiograph {
            width,
            height,
            spacing_mm,
            pixels: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn width_mm(&self) -> f64 {
        self.width as f64 * self.spacing_mm
    }

    pub fn height_mm(&self) -> f64 {
        self.height as f64 * self.spacing_mm
    }

    /// Bilinear sample at index coordinates (pixel centres at integers),
    /// replicating the border outside the grid.
    pub fn sample(&self, x: f64, y: f64) -> f32 {
        bilinear(&self.pixels, self.width, self.height, x, y)
    }

    /// Rounds every pixel to the 16-bit grid used by the on-disk format, so
    /// in-memory and reloaded images are identical.
    pub fn quantize_u16(&mut self) {
        for p in &mut self.pixels {
            *p = dequantize(quantize(*p));
        }
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let header = format!("P5\n{} {}\n65535\n", self.width, self.height);
        let mut out = Vec::with_capacity(header.len() + 2 * self.pixels.len());
        out.extend_from_slice(header.as_bytes());
        for &p in &self.pixels {
            out.extend_from_slice(&quantize(p).to_be_bytes());
        }
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_pgm())
    }

    pub fn read_pgm(path: &Path, spacing_mm: f64) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_pgm(&bytes, spacing_mm).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                column: 0,
                message: msg,
            },
            other => other,
        })
    }

    /// Parses binary (P5) graymaps with 8- or 16-bit samples, normalising
    /// to `[0, 1]` by the declared maximum value.
    pub fn from_pgm(bytes: &[u8], spacing_mm: f64) -> Result<Self> {
        let mut pos = 0usize;
        let mut next_token = |bytes: &[u8]| -> Result<String> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::invalid("truncated PGM header"));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let magic = next_token(bytes)?;
        if magic != "P5" {
            return Err(Error::invalid(format!("unsupported PGM magic {magic:?}")));
        }
        let parse = |s: String, what: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad PGM {what} {s:?}")))
        };
        let width = parse(next_token(bytes)?, "width")?;
        let height = parse(next_token(bytes)?, "height")?;
        let maxval = parse(next_token(bytes)?, "maxval")?;
        if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
            return Err(Error::invalid("PGM dimensions or maxval out of range"));
        }
        // exactly one whitespace byte separates header and raster
        pos += 1;
        let n = width * height;
        let bps = if maxval > 255 { 2 } else { 1 };
        let raster = bytes
            .get(pos..pos + n * bps)
            .ok_or_else(|| Error::invalid("truncated PGM raster"))?;
        let pixels = if bps == 2 {
            raster
                .chunks_exact(2)
                .map(|c| {
                    let v = u16::from_be_bytes([c[0], c[1]]);
                    if maxval == 65535 {
                        dequantize(v)
                    } else {
                        (f64::from(v) / maxval as f64).min(1.0) as f32
                    }
                })
                .collect()
        } else {
            raster
                .iter()
                .map(|&v| (f64::from(v) / maxval as f64).min(1.0) as f32)
                .collect()
        };
        Ok(Radiograph {
            width,
            height,
            spacing_mm,
            pixels,
        })
    }
}

fn quantize(v: f32) -> u16 {
    (f64::from(v).clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn dequantize(v: u16) -> f32 {
    (f64::from(v) / 65535.0) as f32
}

pub(crate) fn bilinear(pixels: &[f32], width: usize, height: usize, x: f64, y: f64) -> f32 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let p = |xx: usize, yy: usize| f64::from(pixels[yy * width + xx]);
    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
    let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

/// Square image patch, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub pixels: Vec<f32>,
}

impl Patch {
    pub fn new(size: usize, pixels: Vec<f32>) -> Result<Self> {
        if size == 0 || pixels.len() != size * size {
            return Err(Error::ShapeMismatch {
                expected: format!("{size}x{size}"),
                got: format!("{} pixels", pixels.len()),
            });
        }
        Ok(Patch { size, pixels })
    }

    pub fn filled(size: usize, value: f32) -> Self {
        Patch {
            size,
            pixels: vec![value; size * size],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.size + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * self.size + x] = v;
    }

    pub fn sample(&self, x: f64, y: f64) -> f32 {
        bilinear(&self.pixels, self.size, self.size, x, y)
    }
}

/// Crops `bbox_mm` (clamped to the image) and resamples it bilinearly to an
/// `output_size` square patch.
pub fn extract_patch(image: &Radiograph, bbox_mm: &BoundingBox, output_size: usize) -> Result<Patch> {
    if output_size == 0 {
        return Err(Error::invalid("patch output size must be positive"));
    }
    let s = image.spacing_mm;
    let px = BoundingBox::new(
        bbox_mm.x_min() / s,
        bbox_mm.y_min() / s,
        bbox_mm.x_max() / s,
        bbox_mm.y_max() / s,
    )?;
    let bounds = BoundingBox::new(0.0, 0.0, image.width as f64, image.height as f64)?;
    let clamped = px
        .intersect(&bounds)
        .ok_or_else(|| Error::invalid("box lies entirely outside the image"))?;
    let step_x = clamped.width() / output_size as f64;
    let step_y = clamped.height() / output_size as f64;
    let mut pixels = Vec::with_capacity(output_size * output_size);
    for j in 0..output_size {
        let y = clamped.y_min() + (j as f64 + 0.5) * step_y - 0.5;
        for i in 0..output_size {
            let x = clamped.x_min() + (i as f64 + 0.5) * step_x - 0.5;
            pixels.push(image.sample(x, y));
        }
    }
    Patch::new(output_size, pixels)
}
