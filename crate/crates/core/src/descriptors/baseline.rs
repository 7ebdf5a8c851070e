//! Hand-crafted colour + gradient descriptor used when no learned features
//! are imported.

use std::f64::consts::PI;
use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};

const COLOR_BINS: usize = 8;
const COLOR_DIM: usize = COLOR_BINS * COLOR_BINS * COLOR_BINS;
const CELLS: usize = 4;
const ORIENTATIONS: usize = 8;
const GRADIENT_DIM: usize = CELLS * CELLS * ORIENTATIONS;

/// 512 joint RGB histogram bins followed by 128 gradient-orientation bins.
pub const BASELINE_DIM: usize = COLOR_DIM + GRADIENT_DIM;

pub fn compute_baseline_descriptor(image: &RgbImage) -> Result<Vec<f64>> {
    let (w, h) = image.dimensions();
    if w < 8 || h < 8 {
        return Err(Error::invalid(format!(
            "image is {w}x{h}, at least 8x8 pixels required"
        )));
    }
    let (w, h) = (w as usize, h as usize);
    let mut out = vec![0.0; BASELINE_DIM];

    // ℓ1-normalised joint colour histogram
    let shift = 8 - COLOR_BINS.trailing_zeros();
    for px in image.pixels() {
        let [r, g, b] = px.0.map(|c| (c >> shift) as usize);
        out[(r * COLOR_BINS + g) * COLOR_BINS + b] += 1.0;
    }
    let total = (w * h) as f64;
    for v in &mut out[..COLOR_DIM] {
        *v /= total;
    }

    // magnitude-weighted orientation histograms over a 4x4 grid of cells
    let luma: Vec<f64> = image
        .pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    let at = |x: usize, y: usize| luma[y * w + x];
    let grad = &mut out[COLOR_DIM..];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = at(x + 1, y) - at(x - 1, y);
            let gy = at(x, y + 1) - at(x, y - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).rem_euclid(2.0 * PI);
            let bin = ((angle / (2.0 * PI) * ORIENTATIONS as f64) as usize).min(ORIENTATIONS - 1);
            let cx = (x * CELLS / w).min(CELLS - 1);
            let cy = (y * CELLS / h).min(CELLS - 1);
            grad[(cy * CELLS + cx) * ORIENTATIONS + bin] += mag;
        }
    }
    let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in grad.iter_mut() {
            *v /= norm;
        }
    }
    Ok(out)
}

pub fn describe_image_file(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let img = image::open(path.as_ref())?.to_rgb8();
    compute_baseline_descriptor(&img)
}
