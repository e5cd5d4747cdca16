//! Per-frame input preparation: head boxes, crops, motion images, the
//! locnet frame, the shoulder crop, and the estimator abstractions used by
//! the evaluation harness.

use depthpose_tensor::{Network, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{crop_resize, gray_to_unit, preprocess, unit_to_gray, Sample, DEFAULT_HI_PCT, DEFAULT_LO_PCT};
use crate::error::{Error, Result};
use crate::eval::apply_occlusion;
use crate::flow::{farneback_flow, flow_to_branch_input, normalize_depth_for_flow, FlowParams, DEFAULT_CLIP_PX};
use crate::geometry::{
    angle_denormalize, head_bbox, mean_valid_depth, shoulder_bbox, AngleScales, BoundingBox, PoseAngles,
    HEAD_EXTENT_MM, SHOULDER_EXTENT_MM,
};
use crate::image::Image;
use crate::networks::TridentModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub crop_size: usize,
    pub lo_pct: f64,
    pub hi_pct: f64,
    pub flow: FlowParams,
    pub flow_clip: f64,
    pub locnet_rows: usize,
    pub locnet_cols: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            crop_size: 64,
            lo_pct: DEFAULT_LO_PCT,
            hi_pct: DEFAULT_HI_PCT,
            flow: FlowParams::default(),
            flow_clip: DEFAULT_CLIP_PX,
            locnet_rows: 132,
            locnet_cols: 160,
        }
    }
}

/// Depth at a head center: mean of valid pixels in a 5x5 window, widening to
/// 15x15 when the small window is all holes.
pub fn center_depth(sample: &Sample, center: (f64, f64)) -> Result<f64> {
    mean_valid_depth(&sample.depth, center, 5)
        .or_else(|| mean_valid_depth(&sample.depth, center, 15))
        .ok_or_else(|| Error::InvalidSample {
            id: sample.id.clone(),
            message: format!("no valid depth around head center ({:.1}, {:.1})", center.0, center.1),
        })
}

pub fn head_box(sample: &Sample, center: (f64, f64)) -> Result<(BoundingBox, f64)> {
    let d = center_depth(sample, center)?;
    Ok((head_bbox(center, sample.intrinsics, HEAD_EXTENT_MM, HEAD_EXTENT_MM, d)?, d))
}

/// Network inputs derived from depth alone.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameInputs {
    pub bbox: BoundingBox,
    pub center_depth: f64,
    /// Raw crop in millimeters, after occlusion.
    pub raw: Image,
    /// Contrast-normalized crop, `[1, S, S]`.
    pub depth: Tensor,
    /// Clipped flow from the previous frame, `[2, S, S]`; zeros without one.
    pub motion: Tensor,
}

/// Crops `sample` and its predecessor with the same head box, applies the
/// occlusion mask to both, and computes the normalized depth crop and the
/// motion image.
pub fn frame_inputs(
    sample: &Sample,
    previous: Option<&Sample>,
    center: (f64, f64),
    occlusion: Option<&Image>,
    cfg: &PipelineConfig,
) -> Result<FrameInputs> {
    let s = cfg.crop_size;
    let (bbox, d) = head_box(sample, center)?;
    let occlude = |img: Image| match occlusion {
        Some(m) => apply_occlusion(&img, m),
        None => Ok(img),
    };
    let raw = occlude(crop_resize(&sample.depth, &bbox, s, s, true))?;
    let depth = preprocess(&raw, cfg.lo_pct, cfg.hi_pct)?.to_tensor();
    let motion = match previous {
        Some(prev) => {
            let prev_raw = occlude(crop_resize(&prev.depth, &bbox, s, s, true))?;
            let flow = farneback_flow(
                &normalize_depth_for_flow(&prev_raw, d),
                &normalize_depth_for_flow(&raw, d),
                &cfg.flow,
            )?;
            flow_to_branch_input(&flow, cfg.flow_clip)?
        }
        None => Tensor::zeros(&[2, s, s]),
    };
    Ok(FrameInputs {
        bbox,
        center_depth: d,
        raw,
        depth,
        motion,
    })
}

/// The gray crop matching `bbox` on the `[-1, 1]` scale, flattened.
pub fn gray_target(sample: &Sample, bbox: &BoundingBox, size: usize) -> Result<Vec<f64>> {
    let gray = sample.gray.as_ref().ok_or_else(|| Error::InvalidSample {
        id: sample.id.clone(),
        message: "no gray image for the face reconstruction target".into(),
    })?;
    Ok(gray_to_unit(&crop_resize(gray, bbox, size, size, false)).data().to_vec())
}

/// Face reconstruction output reshaped to a one-channel image tensor on the
/// `[-1, 1]` scale.
pub fn reconstruct_face_tensor(ffd: &Network, depth: &Tensor) -> Result<Tensor> {
    let [_, r, c] = <[usize; 3]>::try_from(depth.shape()).map_err(|_| Error::ShapeMismatch {
        what: "face reconstruction input",
        expected: "[1, rows, cols]".into(),
        found: format!("{:?}", depth.shape()),
    })?;
    Ok(ffd.infer(depth)?.reshape(&[1, r, c])?)
}

/// Gray levels `0..=255` reconstructed from a normalized depth crop.
pub fn reconstruct_face(ffd: &Network, depth_crop: &Image) -> Result<Image> {
    let t = reconstruct_face_tensor(ffd, &depth_crop.to_tensor())?;
    Ok(unit_to_gray(&Image::from_tensor(&t)?))
}

pub fn trident_inputs(frame: &FrameInputs, ffd: &Network) -> Result<[Tensor; 3]> {
    let face = reconstruct_face_tensor(ffd, &frame.depth)?;
    Ok([frame.depth.clone(), face, frame.motion.clone()])
}

/// Whole frame resized for the localization net and contrast-normalized.
pub fn locnet_input(depth: &Image, cfg: &PipelineConfig) -> Result<Tensor> {
    let full = BoundingBox {
        center_x: depth.cols() as f64 / 2.0,
        center_y: depth.rows() as f64 / 2.0,
        width: depth.cols() as f64,
        height: depth.rows() as f64,
    };
    let small = crop_resize(depth, &full, cfg.locnet_rows, cfg.locnet_cols, true);
    Ok(preprocess(&small, cfg.lo_pct, cfg.hi_pct)?.to_tensor())
}

/// Head center in pixels mapped to `[-1, 1]` across the frame.
pub fn locnet_target(center: (f64, f64), rows: usize, cols: usize) -> [f64; 2] {
    [2.0 * center.0 / cols as f64 - 1.0, 2.0 * center.1 / rows as f64 - 1.0]
}

pub fn locnet_decode(output: &[f64], rows: usize, cols: usize) -> (f64, f64) {
    ((output[0] + 1.0) / 2.0 * cols as f64, (output[1] + 1.0) / 2.0 * rows as f64)
}

pub fn predict_head_center(locnet: &Network, depth: &Image, cfg: &PipelineConfig) -> Result<(f64, f64)> {
    let y = locnet.infer(&locnet_input(depth, cfg)?)?;
    Ok(locnet_decode(y.data(), depth.rows(), depth.cols()))
}

/// Neck-and-shoulders crop, centered a quarter head height below the head
/// center.
pub fn shoulder_input(sample: &Sample, center: (f64, f64), cfg: &PipelineConfig) -> Result<Tensor> {
    let (head, d) = head_box(sample, center)?;
    let bbox = shoulder_bbox(&head, sample.intrinsics, SHOULDER_EXTENT_MM.0, SHOULDER_EXTENT_MM.1, d)?;
    let s = cfg.crop_size;
    Ok(preprocess(&crop_resize(&sample.depth, &bbox, s, s, true), cfg.lo_pct, cfg.hi_pct)?.to_tensor())
}

pub trait HeadLocator: Sync {
    fn locate(&self, sample: &Sample) -> Result<(f64, f64)>;
}

pub struct GroundTruthLocator;

impl HeadLocator for GroundTruthLocator {
    fn locate(&self, sample: &Sample) -> Result<(f64, f64)> {
        Ok(sample.head_center)
    }
}

pub struct LocnetLocator {
    pub net: Network,
    pub config: PipelineConfig,
}

impl HeadLocator for LocnetLocator {
    fn locate(&self, sample: &Sample) -> Result<(f64, f64)> {
        let (x, y) = predict_head_center(&self.net, &sample.depth, &self.config)?;
        // Keep the center inside the frame so a crop can always be taken.
        let clamp = |v: f64, n: usize| v.clamp(0.0, n as f64 - 1e-6);
        Ok((clamp(x, sample.depth.cols()), clamp(y, sample.depth.rows())))
    }
}

pub trait HeadPoseEstimator: Sync {
    fn estimate(
        &self,
        sample: &Sample,
        previous: Option<&Sample>,
        center: (f64, f64),
        occlusion: Option<&Image>,
    ) -> Result<PoseAngles>;
}

pub struct TridentEstimator {
    pub model: TridentModel,
    pub ffd: Network,
    pub config: PipelineConfig,
}

impl HeadPoseEstimator for TridentEstimator {
    fn estimate(&self, sample: &Sample, previous: Option<&Sample>, center: (f64, f64), occlusion: Option<&Image>) -> Result<PoseAngles> {
        let frame = frame_inputs(sample, previous, center, occlusion, &self.config)?;
        self.model.predict(&trident_inputs(&frame, &self.ffd)?)
    }
}

/// Which input a single pose branch reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchStream {
    Depth,
    Face,
    Motion,
}

/// A lone pose branch, for per-stream comparisons.
pub struct BranchEstimator {
    pub net: Network,
    pub scales: AngleScales,
    pub stream: BranchStream,
    /// Needed for [`BranchStream::Face`].
    pub ffd: Option<Network>,
    pub config: PipelineConfig,
}

pub fn branch_input(stream: BranchStream, frame: &FrameInputs, ffd: Option<&Network>) -> Result<Tensor> {
    match stream {
        BranchStream::Depth => Ok(frame.depth.clone()),
        BranchStream::Motion => Ok(frame.motion.clone()),
        BranchStream::Face => {
            let ffd = ffd.ok_or_else(|| Error::MissingPrerequisite(vec!["ffd".into()]))?;
            reconstruct_face_tensor(ffd, &frame.depth)
        }
    }
}

impl HeadPoseEstimator for BranchEstimator {
    fn estimate(&self, sample: &Sample, previous: Option<&Sample>, center: (f64, f64), occlusion: Option<&Image>) -> Result<PoseAngles> {
        let frame = frame_inputs(sample, previous, center, occlusion, &self.config)?;
        let x = branch_input(self.stream, &frame, self.ffd.as_ref())?;
        Ok(angle_denormalize(self.net.infer(&x)?.data(), &self.scales))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthHeadParams};
    use crate::networks::{build_ffd_net, build_locnet};

    fn synth(yaw: f64, x_mm: f64) -> Sample {
        let mut p = SynthHeadParams::default();
        p.pose = PoseAngles::new(0.0, 0.0, yaw);
        p.head_center[0] = x_mm;
        synth_generate(&p, "01_01_00001", 3).unwrap()
    }

    #[test]
    fn head_box_scales_with_depth() {
        let s = synth(0.0, 0.0);
        let (b, d) = head_box(&s, s.head_center).unwrap();
        assert!(d > 0.0 && d < s.head_depth);
        assert!((b.width - s.intrinsics.fx * HEAD_EXTENT_MM / d).abs() < 1e-9);
        let mut holes = s.clone();
        holes.depth = Image::zeros(s.depth.rows(), s.depth.cols());
        assert!(head_box(&holes, s.head_center).is_err());
    }

    #[test]
    fn frame_inputs_shapes_and_static_motion() {
        let s = synth(10.0, 0.0);
        let cfg = PipelineConfig::default();
        let f = frame_inputs(&s, Some(&s), s.head_center, None, &cfg).unwrap();
        assert_eq!(f.depth.shape(), &[1, 64, 64]);
        assert_eq!(f.motion.shape(), &[2, 64, 64]);
        assert!(f.motion.data().iter().all(|v| v.abs() < 1e-3 / cfg.flow_clip));
        let v: Vec<f64> = f.depth.data().iter().copied().filter(|v| *v != 0.0).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 1e-9);
        let none = frame_inputs(&s, None, s.head_center, None, &cfg).unwrap();
        assert_eq!(none.motion, Tensor::zeros(&[2, 64, 64]));
    }

    #[test]
    fn lateral_motion_points_the_right_way() {
        let prev = synth(0.0, 0.0);
        let next = synth(0.0, 8.0);
        let f = frame_inputs(&next, Some(&prev), next.head_center, None, &PipelineConfig::default()).unwrap();
        let u = &f.motion.data()[..64 * 64];
        let mean_u = u.iter().sum::<f64>() / u.len() as f64;
        // The head moves right in the image, but the box follows it; within
        // the crop the previous head appears shifted left.
        assert!(mean_u.abs() < 0.5, "{mean_u}");
    }

    #[test]
    fn occlusion_reaches_both_frames() {
        let s = synth(0.0, 0.0);
        let cfg = PipelineConfig::default();
        let mask = crate::eval::occlusion_mask(crate::eval::OcclusionKind::Top, 64, 64, Default::default()).unwrap();
        let f = frame_inputs(&s, Some(&s), s.head_center, Some(&mask), &cfg).unwrap();
        for i in 0..25 {
            for j in 0..64 {
                assert_eq!(f.raw.get(i, j), 0.0);
                assert_eq!(f.depth.data()[i * 64 + j], 0.0);
            }
        }
        assert!(f.motion.data().iter().all(|v| v.is_finite() && v.abs() < 1e-3));
    }

    #[test]
    fn locnet_target_round_trip() {
        let t = locnet_target((80.0, 33.0), 264, 320);
        assert_eq!(locnet_decode(&t, 264, 320), (80.0, 33.0));
        assert_eq!(locnet_target((160.0, 132.0), 264, 320), [0.0, 0.0]);
        let s = synth(0.0, 0.0);
        let x = locnet_input(&s.depth, &PipelineConfig::default()).unwrap();
        assert_eq!(x.shape(), &[1, 132, 160]);
        let net = Network::new(build_locnet(), 0).unwrap();
        let (cx, cy) = predict_head_center(&net, &s.depth, &PipelineConfig::default()).unwrap();
        assert!(cx.is_finite() && cy.is_finite());
    }

    #[test]
    fn reconstruction_shapes() {
        let ffd = Network::new(build_ffd_net(), 0).unwrap();
        let out = reconstruct_face(&ffd, &Image::filled(64, 64, 0.5)).unwrap();
        assert_eq!((out.rows(), out.cols()), (64, 64));
        assert!(out.data().iter().all(|v| (0.0..=255.0).contains(v)));
        let s = synth(0.0, 0.0);
        let f = frame_inputs(&s, None, s.head_center, None, &PipelineConfig::default()).unwrap();
        let g = gray_target(&s, &f.bbox, 64).unwrap();
        assert_eq!(g.len(), 64 * 64);
        assert!(g.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn shoulder_crop_is_square_tensor() {
        let s = synth(0.0, 0.0);
        let x = shoulder_input(&s, s.head_center, &PipelineConfig::default()).unwrap();
        assert_eq!(x.shape(), &[1, 64, 64]);
        // Torso fills the lower part of the crop, the head only the middle.
        let valid = |rows: std::ops::Range<usize>| rows.flat_map(|i| (0..64).map(move |j| i * 64 + j)).filter(|&k| x.data()[k] != 0.0).count();
        assert!(valid(48..64) > 2 * valid(0..16), "{} vs {}", valid(48..64), valid(0..16));
        assert!(valid(0..64) > 500);
    }
}
