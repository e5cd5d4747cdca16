use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PoseAngles};
use crate::image::Image;

/// Skeleton joints in camera millimeters plus the torso pose they imply.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShoulderAnnotation {
    pub left: Vector3<f64>,
    pub right: Vector3<f64>,
    pub spine_base: Vector3<f64>,
    pub pose: PoseAngles,
}

/// Relative file names a sample was loaded from, reused when writing it back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleFiles {
    pub depth: String,
    pub gray: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub depth: Image,
    pub gray: Option<Image>,
    pub intrinsics: CameraIntrinsics,
    /// Head center in pixels, `(x, y)`.
    pub head_center: (f64, f64),
    /// Head center depth in mm.
    pub head_depth: f64,
    pub pose: PoseAngles,
    pub shoulder: Option<ShoulderAnnotation>,
    pub files: Option<SampleFiles>,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::InvalidSample {
            id: self.id.clone(),
            message,
        };
        if self.id.is_empty() || self.id.contains(['/', '\\']) {
            return Err(bad("id must be a non-empty file-name-safe string".into()));
        }
        if let Some(v) = self.depth.data().iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(bad(format!("depth value {v} is negative or non-finite")));
        }
        let (x, y) = self.head_center;
        if !(x >= 0.0 && y >= 0.0 && x < self.depth.cols() as f64 && y < self.depth.rows() as f64) {
            return Err(bad(format!(
                "head center ({x}, {y}) outside the {}x{} frame",
                self.depth.cols(),
                self.depth.rows()
            )));
        }
        if !(self.head_depth > 0.0 && self.head_depth.is_finite()) {
            return Err(bad(format!("head depth {} must be positive", self.head_depth)));
        }
        if !self.pose.is_finite() {
            return Err(bad("non-finite pose".into()));
        }
        if let Some(g) = &self.gray {
            if (g.rows(), g.cols()) != (self.depth.rows(), self.depth.cols()) {
                return Err(bad("gray and depth images differ in size".into()));
            }
        }
        Ok(())
    }

    pub fn key(&self) -> Option<SampleKey> {
        SampleKey::parse(&self.id)
    }
}

/// Subject, sequence and frame number parsed from ids of the form
/// `SS_QQ_FFFFF` (any digit counts).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SampleKey {
    pub subject: u32,
    pub sequence: u32,
    pub frame: u32,
}

impl SampleKey {
    pub fn parse(id: &str) -> Option<Self> {
        let mut it = id.split('_').map(|p| p.parse::<u32>());
        let key = SampleKey {
            subject: it.next()?.ok()?,
            sequence: it.next()?.ok()?,
            frame: it.next()?.ok()?,
        };
        it.next().is_none().then_some(key)
    }

    pub fn id(&self) -> String {
        format!("{:02}_{:02}_{:05}", self.subject, self.sequence, self.frame)
    }

    /// Id of the preceding frame in the same sequence.
    pub fn previous(&self) -> Option<SampleKey> {
        self.frame.checked_sub(1).map(|frame| SampleKey { frame, ..*self })
    }
}
