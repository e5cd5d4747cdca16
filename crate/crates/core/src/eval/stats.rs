//! Error statistics over frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PoseAngles;

pub const ACCURACY_THRESHOLD_DEG: f64 = 15.0;

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("statistics"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self { mean, std: var.sqrt() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub pitch: MeanStd,
    pub roll: MeanStd,
    pub yaw: MeanStd,
    /// Fraction of frames with all three errors below the threshold.
    pub accuracy: f64,
    /// Per-angle fractions below the threshold, `[pitch, roll, yaw]`.
    pub angle_accuracy: [f64; 3],
    pub n_frames: usize,
}

/// Absolute per-angle errors `[pitch, roll, yaw]` in degrees.
pub fn angle_error(pred: &PoseAngles, truth: &PoseAngles) -> [f64; 3] {
    let (p, t) = (pred.to_array(), truth.to_array());
    [(p[0] - t[0]).abs(), (p[1] - t[1]).abs(), (p[2] - t[2]).abs()]
}

pub fn frame_is_accurate(error: &[f64; 3]) -> bool {
    error.iter().all(|e| *e < ACCURACY_THRESHOLD_DEG)
}

pub fn stats_from_errors(errors: &[[f64; 3]]) -> Result<ErrorStats> {
    if errors.is_empty() {
        return Err(Error::Empty("angular errors"));
    }
    let n = errors.len() as f64;
    let column = |k: usize| errors.iter().map(|e| e[k]).collect::<Vec<_>>();
    let below = |k: usize| errors.iter().filter(|e| e[k] < ACCURACY_THRESHOLD_DEG).count() as f64 / n;
    Ok(ErrorStats {
        pitch: MeanStd::of(&column(0))?,
        roll: MeanStd::of(&column(1))?,
        yaw: MeanStd::of(&column(2))?,
        accuracy: errors.iter().filter(|e| frame_is_accurate(e)).count() as f64 / n,
        angle_accuracy: [below(0), below(1), below(2)],
        n_frames: errors.len(),
    })
}

pub fn angular_errors(preds: &[PoseAngles], truths: &[PoseAngles]) -> Result<ErrorStats> {
    if preds.len() != truths.len() {
        return Err(Error::ShapeMismatch {
            what: "predictions",
            expected: truths.len().to_string(),
            found: preds.len().to_string(),
        });
    }
    let errors: Vec<[f64; 3]> = preds.iter().zip(truths).map(|(p, t)| angle_error(p, t)).collect();
    stats_from_errors(&errors)
}

/// Euclidean pixel distance statistics.
pub fn localization_error(preds: &[(f64, f64)], truths: &[(f64, f64)]) -> Result<MeanStd> {
    if preds.len() != truths.len() {
        return Err(Error::ShapeMismatch {
            what: "predicted centers",
            expected: truths.len().to_string(),
            found: preds.len().to_string(),
        });
    }
    let d: Vec<f64> = preds.iter().zip(truths).map(|(p, t)| (p.0 - t.0).hypot(p.1 - t.1)).collect();
    MeanStd::of(&d)
}
