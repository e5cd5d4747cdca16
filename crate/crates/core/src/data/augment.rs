//! Image-plane augmentation: translation, depth jitter and zoom about the
//! head center. Pose labels are untouched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sample::Sample;
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Largest translation in pixels, along one of eight directions.
    pub max_translation: f64,
    /// Uniform per-pixel depth noise amplitude in mm.
    pub jitter_mm: f64,
    /// Zoom factors are drawn uniformly from this range (1 = none).
    pub zoom: (f64, f64),
}

impl AugmentConfig {
    pub const NONE: AugmentConfig = AugmentConfig {
        max_translation: 0.0,
        jitter_mm: 0.0,
        zoom: (1.0, 1.0),
    };
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_translation: 8.0,
            jitter_mm: 4.0,
            zoom: (0.9, 1.1),
        }
    }
}

/// `p -> center + zoom * (p - center) + (tx, ty)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentTransform {
    pub tx: f64,
    pub ty: f64,
    pub zoom: f64,
    pub center: (f64, f64),
    pub jitter_mm: f64,
    pub jitter_seed: u64,
}

impl AugmentTransform {
    pub fn identity(center: (f64, f64)) -> Self {
        Self {
            tx: 0.0,
            ty: 0.0,
            zoom: 1.0,
            center,
            jitter_mm: 0.0,
            jitter_seed: 0,
        }
    }

    pub fn apply_point(&self, p: (f64, f64)) -> (f64, f64) {
        (
            self.center.0 + self.zoom * (p.0 - self.center.0) + self.tx,
            self.center.1 + self.zoom * (p.1 - self.center.1) + self.ty,
        )
    }

    fn inverse_point(&self, p: (f64, f64)) -> (f64, f64) {
        (
            self.center.0 + (p.0 - self.tx - self.center.0) / self.zoom,
            self.center.1 + (p.1 - self.ty - self.center.1) / self.zoom,
        )
    }
}

/// Draws a transform; the translation is shortened when it would push the
/// head center out of the frame.
pub fn draw_transform(sample: &Sample, config: &AugmentConfig, seed: u64) -> AugmentTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = sample.head_center;
    let dir = rng.gen_range(0..8) as f64 * std::f64::consts::FRAC_PI_4;
    let mag = if config.max_translation > 0.0 {
        rng.gen_range(0.0..=config.max_translation)
    } else {
        0.0
    };
    let zoom = if config.zoom.1 > config.zoom.0 {
        rng.gen_range(config.zoom.0..=config.zoom.1)
    } else {
        config.zoom.0
    };
    let (cols, rows) = (sample.depth.cols() as f64, sample.depth.rows() as f64);
    let limit = |c: f64, t: f64, size: f64| (c + t).clamp(0.0, size - 1e-6) - c;
    AugmentTransform {
        tx: limit(center.0, mag * dir.cos(), cols),
        ty: limit(center.1, mag * dir.sin(), rows),
        zoom,
        center,
        jitter_mm: config.jitter_mm,
        jitter_seed: rng.gen(),
    }
}

fn warp(img: &Image, t: &AugmentTransform, skip_zeros: bool) -> Image {
    Image::from_fn(img.rows(), img.cols(), |r, c| {
        let (x, y) = t.inverse_point((c as f64 + 0.5, r as f64 + 0.5));
        img.sample_bilinear(y - 0.5, x - 0.5, skip_zeros)
    })
}

/// Applies `t`: depth is resampled hole-aware, divided by the zoom (a closer
/// head looks larger) and jittered; gray is resampled; the head center maps
/// through `t` and the head depth is divided by the zoom.
pub fn apply_transform(sample: &Sample, t: &AugmentTransform) -> Sample {
    let mut depth = warp(&sample.depth, t, true);
    let mut rng = ChaCha8Rng::seed_from_u64(t.jitter_seed);
    for v in depth.data_mut() {
        if *v != 0.0 {
            let noise = if t.jitter_mm > 0.0 {
                rng.gen_range(-t.jitter_mm..=t.jitter_mm)
            } else {
                0.0
            };
            *v = (*v / t.zoom + noise).round().max(1.0);
        }
    }
    Sample {
        depth,
        gray: sample.gray.as_ref().map(|g| warp(g, t, false).map(|v| v.round())),
        head_center: t.apply_point(sample.head_center),
        head_depth: sample.head_depth / t.zoom,
        files: None,
        ..sample.clone()
    }
}

pub fn augment(sample: &Sample, config: &AugmentConfig, seed: u64) -> Sample {
    apply_transform(sample, &draw_transform(sample, config, seed))
}
