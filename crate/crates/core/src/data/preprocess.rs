//! Cropping, resampling and contrast normalization of depth crops.

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::image::Image;

pub const DEFAULT_LO_PCT: f64 = 2.0;
pub const DEFAULT_HI_PCT: f64 = 98.0;

/// Resamples `box` (image coordinates, pixel `c` spanning `[c, c+1)`) to
/// `out_rows x out_cols` with bilinear interpolation. Area outside the frame
/// reads as 0. With `skip_zeros`, zero pixels are treated as holes and do not
/// bleed into their neighbors.
pub fn crop_resize(img: &Image, bbox: &BoundingBox, out_rows: usize, out_cols: usize, skip_zeros: bool) -> Image {
    let sx = bbox.width / out_cols as f64;
    let sy = bbox.height / out_rows as f64;
    let (left, top) = (bbox.left(), bbox.top());
    Image::from_fn(out_rows, out_cols, |i, j| {
        let y = top + (i as f64 + 0.5) * sy - 0.5;
        let x = left + (j as f64 + 0.5) * sx - 0.5;
        img.sample_bilinear(y, x, skip_zeros)
    })
}

/// Linear-interpolated percentile of sorted values.
fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Stretches nonzero pixels between the `lo_pct` and `hi_pct` percentiles
/// (clamping outside), then standardizes them to zero mean and unit
/// population variance. Zero pixels stay 0. A crop with no spread comes back
/// all zeros.
pub fn preprocess(img: &Image, lo_pct: f64, hi_pct: f64) -> Result<Image> {
    if !(0.0 <= lo_pct && lo_pct < hi_pct && hi_pct <= 100.0) {
        return Err(Error::InvalidArgument(format!("percentiles must satisfy 0 <= lo < hi <= 100, got {lo_pct}, {hi_pct}")));
    }
    let mut valid: Vec<f64> = img.data().iter().copied().filter(|&v| v != 0.0).collect();
    let zeros = Image::zeros(img.rows(), img.cols());
    if valid.len() < 2 {
        return Ok(zeros);
    }
    valid.sort_by(f64::total_cmp);
    let (plo, phi) = (percentile(&valid, lo_pct), percentile(&valid, hi_pct));
    if !(phi > plo) {
        return Ok(zeros);
    }
    let stretch = |v: f64| ((v - plo) / (phi - plo)).clamp(0.0, 1.0);
    let n = valid.len() as f64;
    let mean = img.data().iter().filter(|&&v| v != 0.0).map(|&v| stretch(v)).sum::<f64>() / n;
    let var = img
        .data()
        .iter()
        .filter(|&&v| v != 0.0)
        .map(|&v| (stretch(v) - mean).powi(2))
        .sum::<f64>()
        / n;
    if !(var > 1e-24) {
        return Ok(zeros);
    }
    let sd = var.sqrt();
    Ok(img.map(|v| if v == 0.0 { 0.0 } else { (stretch(v) - mean) / sd }))
}

/// 8-bit gray levels to the `[-1, 1]` tanh range.
pub fn gray_to_unit(img: &Image) -> Image {
    img.map(|g| g / 127.5 - 1.0)
}

/// Inverse of [`gray_to_unit`], rounded and clamped to `0..=255`.
pub fn unit_to_gray(img: &Image) -> Image {
    img.map(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0))
}
