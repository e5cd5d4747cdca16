//! Distance-adaptive crop boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Physical head extent in mm used for both crop axes.
pub const HEAD_EXTENT_MM: f64 = 320.0;
/// Shoulder extent in mm, horizontal and vertical.
pub const SHOULDER_EXTENT_MM: (f64, f64) = (850.0, 500.0);
/// Flatter shoulder crop variant.
pub const SHOULDER_EXTENT_FLAT_MM: (f64, f64) = (850.0, 250.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidArgument(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        Ok(Self { fx, fy })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub center_x: f64,
    pub center_y: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn left(&self) -> f64 {
        self.center_x - self.width / 2.0
    }

    pub fn top(&self) -> f64 {
        self.center_y - self.height / 2.0
    }

    /// Intersection with the `cols x rows` image; `None` when nothing is left.
    pub fn clamped(&self, cols: usize, rows: usize) -> Option<BoundingBox> {
        let x0 = self.left().max(0.0);
        let y0 = self.top().max(0.0);
        let x1 = (self.left() + self.width).min(cols as f64);
        let y1 = (self.top() + self.height).min(rows as f64);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(BoundingBox {
            center_x: (x0 + x1) / 2.0,
            center_y: (y0 + y1) / 2.0,
            width: x1 - x0,
            height: y1 - y0,
        })
    }
}

fn check_depth(d: f64) -> Result<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidDepth(d))
    }
}

/// Box of `fx*rx/d` by `fy*ry/d` pixels centered on `center`.
pub fn head_bbox(center: (f64, f64), intrinsics: CameraIntrinsics, rx: f64, ry: f64, d: f64) -> Result<BoundingBox> {
    check_depth(d)?;
    Ok(BoundingBox {
        center_x: center.0,
        center_y: center.1,
        width: intrinsics.fx * rx / d,
        height: intrinsics.fy * ry / d,
    })
}

/// Box around the neck: same column as the head, centered a quarter head
/// height towards the torso. The offset `y_H - h_H/4` is stated for an upward
/// vertical axis; image rows grow downwards, so it is added here.
pub fn shoulder_bbox(
    head: &BoundingBox,
    intrinsics: CameraIntrinsics,
    rx: f64,
    ry: f64,
    d: f64,
) -> Result<BoundingBox> {
    head_bbox((head.center_x, head.center_y + head.height / 4.0), intrinsics, rx, ry, d)
}

/// Mean of the nonzero depth values in a `window x window` patch around
/// `(x, y)`; `None` if the patch holds no valid depth.
pub fn mean_valid_depth(depth: &Image, center: (f64, f64), window: usize) -> Option<f64> {
    let half = (window / 2) as i64;
    let (cx, cy) = (center.0.floor() as i64, center.1.floor() as i64);
    let (mut sum, mut n) = (0.0, 0usize);
    for r in cy - half..=cy + half {
        for c in cx - half..=cx + half {
            if let Some(v) = depth.get_signed(r, c) {
                if v > 0.0 {
                    sum += v;
                    n += 1;
                }
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}
