//! Synthetic occlusion masks for head crops.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OcclusionKind {
    Left,
    Top,
    Right,
    Bottom,
    Middle,
    /// One of the five fixed kinds, drawn per frame.
    Random,
}

impl OcclusionKind {
    pub const FIXED: [OcclusionKind; 5] = [
        OcclusionKind::Left,
        OcclusionKind::Top,
        OcclusionKind::Right,
        OcclusionKind::Bottom,
        OcclusionKind::Middle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OcclusionKind::Left => "left",
            OcclusionKind::Top => "top",
            OcclusionKind::Right => "right",
            OcclusionKind::Bottom => "bottom",
            OcclusionKind::Middle => "middle",
            OcclusionKind::Random => "random",
        }
    }

    /// Resolves `Random` to a fixed kind using `seed`; fixed kinds map to
    /// themselves.
    pub fn resolve(self, seed: u64) -> OcclusionKind {
        match self {
            OcclusionKind::Random => Self::FIXED[ChaCha8Rng::seed_from_u64(seed).gen_range(0..Self::FIXED.len())],
            k => k,
        }
    }
}

impl fmt::Display for OcclusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OcclusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::FIXED
            .into_iter()
            .chain([OcclusionKind::Random])
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown occlusion kind `{s}`")))
    }
}

/// Fraction of the crop covered by each band; the middle mask is a centered
/// `extent x extent` rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionExtent(pub f64);

impl Default for OcclusionExtent {
    fn default() -> Self {
        Self(0.4)
    }
}

/// 0/1 mask, zero where occluded. `kind` must be fixed.
pub fn occlusion_mask(kind: OcclusionKind, rows: usize, cols: usize, extent: OcclusionExtent) -> Result<Image> {
    let e = extent.0;
    if !(e > 0.0 && e < 1.0) {
        return Err(Error::Config(format!("occlusion extent must lie in (0, 1), got {e}")));
    }
    let (r, c) = (rows as f64, cols as f64);
    let inside = |v: usize, lo: f64, hi: f64| (v as f64) >= lo && (v as f64) < hi;
    let occluded: Box<dyn Fn(usize, usize) -> bool> = match kind {
        OcclusionKind::Left => Box::new(move |_, j| inside(j, 0.0, e * c)),
        OcclusionKind::Right => Box::new(move |_, j| inside(j, (1.0 - e) * c, c)),
        OcclusionKind::Top => Box::new(move |i, _| inside(i, 0.0, e * r)),
        OcclusionKind::Bottom => Box::new(move |i, _| inside(i, (1.0 - e) * r, r)),
        OcclusionKind::Middle => {
            let (r0, c0) = ((1.0 - e) / 2.0 * r, (1.0 - e) / 2.0 * c);
            Box::new(move |i, j| inside(i, r0, r0 + e * r) && inside(j, c0, c0 + e * c))
        }
        OcclusionKind::Random => {
            return Err(Error::InvalidArgument("resolve a random occlusion before building its mask".into()))
        }
    };
    Ok(Image::from_fn(rows, cols, |i, j| if occluded(i, j) { 0.0 } else { 1.0 }))
}

/// Zeroes (invalidates) the pixels where `mask` is 0.
pub fn apply_occlusion(crop: &Image, mask: &Image) -> Result<Image> {
    if (crop.rows(), crop.cols()) != (mask.rows(), mask.cols()) {
        return Err(Error::ShapeMismatch {
            what: "occlusion mask",
            expected: format!("{}x{}", crop.rows(), crop.cols()),
            found: format!("{}x{}", mask.rows(), mask.cols()),
        });
    }
    let data = crop.data().iter().zip(mask.data()).map(|(v, m)| v * m).collect();
    Image::new(crop.rows(), crop.cols(), data)
}
