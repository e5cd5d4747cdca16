//! Ray-cast parametric head (ellipsoid, nose bump, optional torso) seen by a
//! pinhole depth camera, with a Lambertian gray rendering of the same surface.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::canonical::{Dataset, DatasetMeta};
use super::sample::{Sample, SampleKey, ShoulderAnnotation};
use crate::error::{Error, Result};
use crate::geometry::{head_axes, pose_to_camera_rotation, CameraIntrinsics, PoseAngles};
use crate::image::Image;
use crate::seed::derive_seed;

/// Nose as a small ellipsoid in head coordinates (x forward, y right, z down).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoseParams {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
}

/// Torso ellipsoid hinged at the neck. Offsets are in camera axes for a
/// frontal torso and rotate with `pose`; the right shoulder mirrors the left
/// in x. The joint labels reproduce `pose` only when both joint offsets have
/// zero z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorsoParams {
    pub neck_offset: [f64; 3],
    pub center_offset: [f64; 3],
    pub semi_axes: [f64; 3],
    pub left_shoulder: [f64; 3],
    pub spine_base: [f64; 3],
    pub pose: PoseAngles,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthHeadParams {
    /// Forward, right, down, in mm.
    pub head_semi_axes: [f64; 3],
    pub nose: NoseParams,
    /// Camera coordinates in mm.
    pub head_center: [f64; 3],
    pub pose: PoseAngles,
    pub intrinsics: CameraIntrinsics,
    pub cols: usize,
    pub rows: usize,
    pub torso: Option<TorsoParams>,
    /// Direction towards the light, camera axes.
    pub light_dir: [f64; 3],
    /// Uniform depth noise amplitude in mm, drawn from the seed.
    pub noise_mm: f64,
}

impl Default for TorsoParams {
    fn default() -> Self {
        Self {
            neck_offset: [0.0, 120.0, 20.0],
            center_offset: [0.0, 230.0, 30.0],
            semi_axes: [190.0, 230.0, 110.0],
            left_shoulder: [165.0, 45.0, 0.0],
            spine_base: [0.0, 470.0, 0.0],
            pose: PoseAngles::ZERO,
        }
    }
}

impl Default for SynthHeadParams {
    fn default() -> Self {
        Self {
            head_semi_axes: [100.0, 78.0, 115.0],
            nose: NoseParams {
                center: [88.0, 0.0, 12.0],
                semi_axes: [30.0, 13.0, 22.0],
            },
            head_center: [0.0, 0.0, 1000.0],
            pose: PoseAngles::ZERO,
            intrinsics: CameraIntrinsics { fx: 240.0, fy: 240.0 },
            cols: 320,
            rows: 264,
            torso: Some(TorsoParams::default()),
            light_dir: [-0.3, -0.5, -1.0],
            noise_mm: 0.0,
        }
    }
}

struct Ellipsoid {
    center: Vector3<f64>,
    /// Local-to-camera rotation.
    axes: Matrix3<f64>,
    semi: Vector3<f64>,
}

impl Ellipsoid {
    /// Smallest positive ray parameter and the local hit point, for a ray from
    /// the origin with direction `d`.
    fn intersect(&self, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        let o = self.axes.transpose() * (-self.center);
        let dl = self.axes.transpose() * d;
        let os = o.component_div(&self.semi);
        let ds = dl.component_div(&self.semi);
        let a = ds.dot(&ds);
        let b = 2.0 * os.dot(&ds);
        let c = os.dot(&os) - 1.0;
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let t0 = (-b - sq) / (2.0 * a);
        let t1 = (-b + sq) / (2.0 * a);
        let t = if t0 > 0.0 { t0 } else if t1 > 0.0 { t1 } else { return None };
        Some((t, o + dl * t))
    }

    fn normal(&self, local: &Vector3<f64>) -> Vector3<f64> {
        let g = local.component_div(&self.semi.component_mul(&self.semi));
        (self.axes * g).normalize()
    }
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn head_albedo(p: &Vector3<f64>) -> f64 {
    let eye = |side: f64| (p.y - side * 30.0).powi(2) + (p.z + 15.0).powi(2) < 144.0;
    if p.x > 0.0 && (eye(1.0) || eye(-1.0)) {
        0.25
    } else if p.x > 0.0 && p.y.abs() < 22.0 && (p.z - 48.0).abs() < 5.0 {
        0.45
    } else if p.z < -55.0 {
        0.35
    } else {
        0.85
    }
}

#[derive(Clone, Copy)]
enum Surface {
    Head,
    Nose,
    Torso,
}

struct Scene {
    parts: Vec<(Surface, Ellipsoid)>,
}

impl SynthHeadParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64]| v.iter().all(|x| *x > 0.0 && x.is_finite());
        if !positive(&self.head_semi_axes) || !positive(&self.nose.semi_axes) {
            return Err(Error::InvalidArgument("ellipsoid semi-axes must be positive".into()));
        }
        if let Some(t) = &self.torso {
            if !positive(&t.semi_axes) {
                return Err(Error::InvalidArgument("torso semi-axes must be positive".into()));
            }
        }
        if self.cols == 0 || self.rows == 0 || !(self.noise_mm >= 0.0) {
            return Err(Error::InvalidArgument("image size and noise must be non-negative".into()));
        }
        CameraIntrinsics::new(self.intrinsics.fx, self.intrinsics.fy)?;
        let reach = self.head_semi_axes.iter().cloned().fold(0.0, f64::max);
        if !(self.head_center[2] - reach > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "head behind or through the camera plane (center z = {} mm)",
                self.head_center[2]
            )));
        }
        Ok(())
    }

    /// Principal point at the image center. Pixel `c` spans `[c, c+1)`.
    pub fn principal_point(&self) -> (f64, f64) {
        (self.cols as f64 / 2.0, self.rows as f64 / 2.0)
    }

    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        let (px, py) = self.principal_point();
        (px + self.intrinsics.fx * p.x / p.z, py + self.intrinsics.fy * p.y / p.z)
    }

    fn torso_frame(&self, t: &TorsoParams) -> (Vector3<f64>, Matrix3<f64>) {
        let neck = v3(self.head_center) + v3(t.neck_offset);
        (neck, pose_to_camera_rotation(t.pose))
    }

    pub fn shoulder_joints(&self) -> Option<ShoulderAnnotation> {
        let t = self.torso.as_ref()?;
        let (neck, r) = self.torso_frame(t);
        let ls = v3(t.left_shoulder);
        let rs = Vector3::new(-ls.x, ls.y, ls.z);
        Some(ShoulderAnnotation {
            left: neck + r * ls,
            right: neck + r * rs,
            spine_base: neck + r * v3(t.spine_base),
            pose: t.pose,
        })
    }

    fn scene(&self) -> Scene {
        let head_axes_cam = head_axes() * crate::geometry::euler_to_rotmat(self.pose);
        let c = v3(self.head_center);
        let mut parts = vec![
            (
                Surface::Head,
                Ellipsoid {
                    center: c,
                    axes: head_axes_cam,
                    semi: v3(self.head_semi_axes),
                },
            ),
            (
                Surface::Nose,
                Ellipsoid {
                    center: c + head_axes_cam * v3(self.nose.center),
                    axes: head_axes_cam,
                    semi: v3(self.nose.semi_axes),
                },
            ),
        ];
        if let Some(t) = &self.torso {
            let (neck, r) = self.torso_frame(t);
            parts.push((
                Surface::Torso,
                Ellipsoid {
                    center: neck + r * v3(t.center_offset),
                    axes: r,
                    semi: v3(t.semi_axes),
                },
            ));
        }
        Scene { parts }
    }
}

/// Per-pixel ray cast. Depth is the hit's z in whole millimeters (0 where
/// nothing is hit); gray is 8-bit Lambertian shading times albedo.
pub fn render(params: &SynthHeadParams, seed: u64) -> Result<(Image, Image)> {
    params.validate()?;
    let scene = params.scene();
    let (px, py) = params.principal_point();
    let light = v3(params.light_dir).normalize();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut depth = Image::zeros(params.rows, params.cols);
    let mut gray = Image::zeros(params.rows, params.cols);
    for r in 0..params.rows {
        for c in 0..params.cols {
            let d = Vector3::new(
                (c as f64 + 0.5 - px) / params.intrinsics.fx,
                (r as f64 + 0.5 - py) / params.intrinsics.fy,
                1.0,
            );
            let mut best: Option<(f64, Surface, Vector3<f64>, &Ellipsoid)> = None;
            for (kind, e) in &scene.parts {
                if let Some((t, local)) = e.intersect(&d) {
                    if best.as_ref().is_none_or(|b| t < b.0) {
                        best = Some((t, *kind, local, e));
                    }
                }
            }
            let noise = if params.noise_mm > 0.0 {
                rng.gen_range(-params.noise_mm..=params.noise_mm)
            } else {
                0.0
            };
            let Some((t, kind, local, e)) = best else { continue };
            let z = (t + noise).round().max(1.0);
            depth.set(r, c, z);
            let albedo = match kind {
                Surface::Head => head_albedo(&local),
                Surface::Nose => 0.9,
                Surface::Torso => 0.55,
            };
            let shade = 0.25 + 0.75 * e.normal(&local).dot(&light).max(0.0);
            gray.set(r, c, (255.0 * albedo * shade).round().clamp(1.0, 255.0));
        }
    }
    Ok((depth, gray))
}

/// Renders one labelled sample. The stored head depth is the center's z.
pub fn synth_generate(params: &SynthHeadParams, id: &str, seed: u64) -> Result<Sample> {
    let (depth, gray) = render(params, seed)?;
    let center = v3(params.head_center);
    let sample = Sample {
        id: id.to_string(),
        depth,
        gray: Some(gray),
        intrinsics: params.intrinsics,
        head_center: params.project(&center),
        head_depth: center.z,
        pose: params.pose,
        shoulder: params.shoulder_joints(),
        files: None,
    };
    sample.validate()?;
    Ok(sample)
}

/// Sequences of smoothly varying poses. Every sequence is its own subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count: usize,
    pub sequences: usize,
    pub seed: u64,
    /// Maximum absolute head angles, `[pitch, roll, yaw]`.
    pub head_range: [f64; 3],
    pub shoulder_range: [f64; 3],
    /// Maximum per-frame angle change.
    pub step_deg: f64,
    /// Range of head center z in mm.
    pub depth_range: (f64, f64),
    /// Maximum lateral head offset in mm.
    pub lateral_mm: f64,
    pub torso: bool,
    pub base: SynthHeadParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 0,
            sequences: 24,
            seed: 0,
            head_range: [100.0, 70.0, 125.0],
            shoulder_range: [20.0, 15.0, 35.0],
            step_deg: 4.0,
            depth_range: (850.0, 1250.0),
            lateral_mm: 60.0,
            torso: true,
            base: SynthHeadParams::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sequences > 0
            && self.head_range.iter().chain(&self.shoulder_range).all(|r| *r >= 0.0 && r.is_finite())
            && self.step_deg >= 0.0
            && self.depth_range.0 > 0.0
            && self.depth_range.0 <= self.depth_range.1
            && self.lateral_mm >= 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid synthetic dataset config: {self:?}")));
        }
        self.base.validate()
    }

    /// Parameters for every frame, in id order.
    pub fn plan(&self) -> Result<Vec<(String, SynthHeadParams)>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.count);
        for seq in 0..self.sequences {
            let frames = self.count / self.sequences + usize::from(seq < self.count % self.sequences);
            if frames == 0 {
                continue;
            }
            let number = seq as u32 + 1;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &format!("sequence {number}")));
            let draw = |range: f64, rng: &mut ChaCha8Rng| if range > 0.0 { rng.gen_range(-range..=range) } else { 0.0 };
            let mut head: Vec<f64> = self.head_range.iter().map(|r| draw(0.8 * r, &mut rng)).collect();
            let mut torso: Vec<f64> = self.shoulder_range.iter().map(|r| draw(0.8 * r, &mut rng)).collect();
            let mut pos = [
                draw(self.lateral_mm, &mut rng),
                draw(self.lateral_mm, &mut rng),
                rng.gen_range(self.depth_range.0..=self.depth_range.1),
            ];
            for frame in 0..frames {
                if frame > 0 {
                    for (a, r) in head.iter_mut().zip(self.head_range) {
                        *a = (*a + draw(self.step_deg, &mut rng)).clamp(-r, r);
                    }
                    for (a, r) in torso.iter_mut().zip(self.shoulder_range) {
                        *a = (*a + draw(self.step_deg / 2.0, &mut rng)).clamp(-r, r);
                    }
                    pos[0] = (pos[0] + draw(4.0, &mut rng)).clamp(-self.lateral_mm, self.lateral_mm);
                    pos[1] = (pos[1] + draw(4.0, &mut rng)).clamp(-self.lateral_mm, self.lateral_mm);
                    pos[2] = (pos[2] + draw(8.0, &mut rng)).clamp(self.depth_range.0, self.depth_range.1);
                }
                let mut p = self.base;
                p.pose = PoseAngles::new(head[0], head[1], head[2]);
                p.head_center = pos;
                p.torso = self.torso.then(|| TorsoParams {
                    pose: PoseAngles::new(torso[0], torso[1], torso[2]),
                    ..self.base.torso.unwrap_or_default()
                });
                let key = SampleKey {
                    subject: number,
                    sequence: number,
                    frame: frame as u32,
                };
                out.push((key.id(), p));
            }
        }
        Ok(out)
    }
}

pub fn synth_dataset(config: &SynthConfig) -> Result<Dataset> {
    use rayon::prelude::*;
    let plan = config.plan()?;
    let samples = plan
        .par_iter()
        .map(|(id, p)| synth_generate(p, id, derive_seed(config.seed, id)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(
        samples,
        DatasetMeta {
            source: format!("synthetic seed={} count={}", config.seed, config.count),
            ..DatasetMeta::default()
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shoulder_frame;

    fn head_only() -> SynthHeadParams {
        SynthHeadParams {
            torso: None,
            ..SynthHeadParams::default()
        }
    }

    #[test]
    fn frontal_head_is_left_right_symmetric() {
        let p = head_only();
        let (depth, _) = render(&p, 0).unwrap();
        assert!(depth.valid_count() > 1000);
        for r in 0..p.rows {
            for c in 0..p.cols / 2 {
                let (a, b) = (depth.get(r, c), depth.get(r, p.cols - 1 - c));
                assert!((a - b).abs() <= 1.0, "row {r} col {c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn projected_width_matches_pinhole_model() {
        let p = SynthHeadParams {
            nose: NoseParams {
                center: [0.0; 3],
                semi_axes: [1.0; 3],
            },
            ..head_only()
        };
        let (depth, _) = render(&p, 0).unwrap();
        let row = p.rows / 2;
        let cols: Vec<usize> = (0..p.cols).filter(|&c| depth.get(row, c) > 0.0).collect();
        let measured = (cols.last().unwrap() - cols[0] + 1) as f64;
        // The silhouette of a sphere-like ellipsoid under perspective is the
        // tangent cone, slightly wider than 2*semi*f/z.
        let expected = p.intrinsics.fx * 2.0 * p.head_semi_axes[1] / p.head_center[2];
        assert!((measured - expected).abs() <= 2.0, "{measured} vs {expected}");
    }

    #[test]
    fn deterministic_for_a_seed() {
        let p = SynthHeadParams {
            noise_mm: 3.0,
            ..SynthHeadParams::default()
        };
        let a = synth_generate(&p, "a", 5).unwrap();
        let b = synth_generate(&p, "a", 5).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&p, "a", 6).unwrap();
        assert_ne!(a.depth, c.depth);
    }

    #[test]
    fn depth_shift_moves_on_axis_depth_exactly() {
        // Perspective changes which surface point a ray hits, so the shift is
        // exact only on the optical axis.
        let p = SynthHeadParams {
            cols: 321,
            rows: 265,
            ..head_only()
        };
        let q = SynthHeadParams {
            head_center: [0.0, 0.0, 1250.0],
            ..p
        };
        let (a, _) = render(&p, 0).unwrap();
        let (b, _) = render(&q, 0).unwrap();
        let (c, r) = (p.cols / 2, p.rows / 2);
        assert_eq!(b.get(r, c) - a.get(r, c), 250.0);
    }

    #[test]
    fn labels_match_inputs() {
        let mut p = SynthHeadParams::default();
        p.pose = PoseAngles::new(12.5, -7.0, 33.0);
        p.head_center = [40.0, -20.0, 1100.0];
        p.torso.as_mut().unwrap().pose = PoseAngles::new(5.0, 3.0, -20.0);
        let s = synth_generate(&p, "x", 0).unwrap();
        assert_eq!(s.pose, p.pose);
        assert_eq!(s.head_depth, 1100.0);
        assert!((s.head_center.0 - (160.0 + 240.0 * 40.0 / 1100.0)).abs() < 1e-12);
        let sh = s.shoulder.unwrap();
        let f = shoulder_frame(sh.left, sh.right, sh.spine_base).unwrap();
        let a = f.angles().unwrap().angles;
        for (x, y) in a.to_array().iter().zip(sh.pose.to_array()) {
            assert!((x - y).abs() < 1e-9);
        }
        // The head center pixel sees the face, not the torso.
        let (cx, cy) = s.head_center;
        let d = s.depth.get(cy as usize, cx as usize);
        assert!(d > 950.0 && d < 1100.0, "{d}");
    }

    #[test]
    fn head_behind_camera_is_rejected() {
        let p = SynthHeadParams {
            head_center: [0.0, 0.0, 50.0],
            ..SynthHeadParams::default()
        };
        assert!(synth_generate(&p, "x", 0).is_err());
    }

    #[test]
    fn dataset_respects_ranges_and_count() {
        let cfg = SynthConfig {
            count: 7,
            sequences: 3,
            seed: 11,
            head_range: [10.0, 5.0, 20.0],
            base: SynthHeadParams {
                cols: 80,
                rows: 66,
                intrinsics: CameraIntrinsics { fx: 60.0, fy: 60.0 },
                ..SynthHeadParams::default()
            },
            ..SynthConfig::default()
        };
        let ds = synth_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 7);
        for s in ds.samples() {
            assert!(s.pose.pitch.abs() <= 10.0 && s.pose.roll.abs() <= 5.0 && s.pose.yaw.abs() <= 20.0);
        }
        assert_eq!(ds.samples()[0].id, "01_01_00000");
        assert_eq!(ds.samples()[3].id, "02_02_00000");
        assert!(ds.previous(&ds.samples()[1]).is_some());
        assert_eq!(synth_dataset(&cfg).unwrap(), ds);
        let empty = synth_dataset(&SynthConfig { count: 0, ..cfg }).unwrap();
        assert!(empty.is_empty());
    }
}
