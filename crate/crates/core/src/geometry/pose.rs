//! Pose angles, Euler conversion and per-angle normalization.
//!
//! Angles follow the intrinsic yaw-pitch-roll (Z-Y'-X'') convention in a head
//! body frame with x forward, y to the subject's right and z down:
//! `R = Rz(yaw) * Ry(pitch) * Rx(roll)`. [`head_axes`] maps that body frame
//! into camera coordinates (x right, y down, z away from the camera) for a
//! subject facing the camera.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Written into checkpoints and reports so foreign conventions can be adapted.
pub const EULER_CONVENTION: &str =
    "intrinsic Z-Y'-X'' (yaw, pitch, roll) in degrees; body x=forward y=right z=down; camera x=right y=down z=depth";

/// Pitch, roll and yaw in degrees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseAngles {
    pub pitch: f64,
    pub roll: f64,
    pub yaw: f64,
}

impl PoseAngles {
    pub const ZERO: PoseAngles = PoseAngles {
        pitch: 0.0,
        roll: 0.0,
        yaw: 0.0,
    };

    pub fn new(pitch: f64, roll: f64, yaw: f64) -> Self {
        Self { pitch, roll, yaw }
    }

    /// `[pitch, roll, yaw]`, the order used by every regressor.
    pub fn to_array(self) -> [f64; 3] {
        [self.pitch, self.roll, self.yaw]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Body-to-camera axes for a frontal subject: columns are the camera-frame
/// images of body x (forward, towards the camera), y (right) and z (down).
pub fn head_axes() -> Matrix3<f64> {
    Matrix3::from_columns(&[
        Vector3::new(0.0, 0.0, -1.0),
        Vector3::new(-1.0, 0.0, 0.0),
        Vector3::new(0.0, 1.0, 0.0),
    ])
}

pub fn euler_to_rotmat(angles: PoseAngles) -> Matrix3<f64> {
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), angles.yaw.to_radians());
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), angles.pitch.to_radians());
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), angles.roll.to_radians());
    (rz * ry * rx).into_inner()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerDecomposition {
    pub angles: PoseAngles,
    /// Pitch within 1e-6 degrees of +-90; roll was fixed to 0.
    pub gimbal_lock: bool,
}

pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

/// Inverse of [`euler_to_rotmat`]. At gimbal lock the roll is set to zero and
/// the whole in-plane rotation is attributed to yaw.
pub fn rotmat_to_euler(m: &Matrix3<f64>) -> Result<EulerDecomposition> {
    let residual = (m.transpose() * m - Matrix3::identity()).abs().max();
    let det = m.determinant();
    if !(residual <= ORTHONORMAL_TOLERANCE) || !((det - 1.0).abs() <= ORTHONORMAL_TOLERANCE) {
        return Err(Error::NotRotation(residual.max((det - 1.0).abs())));
    }
    let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin().to_degrees();
    if (90.0 - pitch.abs()).abs() < 1e-6 {
        let yaw = (-m[(0, 1)]).atan2(m[(1, 1)]).to_degrees();
        return Ok(EulerDecomposition {
            angles: PoseAngles::new(pitch, 0.0, yaw),
            gimbal_lock: true,
        });
    }
    let yaw = m[(1, 0)].atan2(m[(0, 0)]).to_degrees();
    let roll = m[(2, 1)].atan2(m[(2, 2)]).to_degrees();
    Ok(EulerDecomposition {
        angles: PoseAngles::new(pitch, roll, yaw),
        gimbal_lock: false,
    })
}

/// Orientation of a body with the given pose, expressed in camera axes.
pub fn pose_to_camera_rotation(angles: PoseAngles) -> Matrix3<f64> {
    let p = head_axes();
    p * euler_to_rotmat(angles) * p.transpose()
}

pub fn camera_rotation_to_pose(r: &Matrix3<f64>) -> Result<EulerDecomposition> {
    let p = head_axes();
    rotmat_to_euler(&(p.transpose() * r * p))
}

/// Largest normalized target magnitude produced by [`AngleScales::from_max_abs`].
pub const TANH_TARGET_LIMIT: f64 = 0.9;

/// Positive per-angle normalization scales in degrees, `[pitch, roll, yaw]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleScales(pub [f64; 3]);

impl AngleScales {
    pub fn new(scales: [f64; 3]) -> Result<Self> {
        if scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!("angle scales must be positive, got {scales:?}")));
        }
        Ok(Self(scales))
    }

    /// Largest absolute angle per component (floored at one degree), widened
    /// so that it maps to [`TANH_TARGET_LIMIT`] rather than the unreachable 1.
    pub fn from_max_abs<'a>(poses: impl IntoIterator<Item = &'a PoseAngles>) -> Self {
        let mut s = [1.0f64; 3];
        for p in poses {
            for (si, v) in s.iter_mut().zip(p.to_array()) {
                *si = si.max(v.abs());
            }
        }
        Self(s.map(|v| v / TANH_TARGET_LIMIT))
    }

    pub fn to_meta(&self) -> String {
        format!("{},{},{}", self.0[0], self.0[1], self.0[2])
    }

    pub fn from_meta(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Checkpoint(format!("bad angle scales `{s}`: {e}")))?;
        let arr: [f64; 3] = parts
            .try_into()
            .map_err(|_| Error::Checkpoint(format!("angle scales need three values, got `{s}`")))?;
        Self::new(arr)
    }
}

/// Normalized angles plus the number of components that had to be clamped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalized {
    pub values: [f64; 3],
    pub clamped: usize,
}

/// Divides each angle by its scale; values outside `[-1, 1]` are clamped and
/// counted.
pub fn angle_normalize(angles: PoseAngles, scales: &AngleScales) -> Normalized {
    let mut clamped = 0;
    let mut values = [0.0; 3];
    for ((v, a), s) in values.iter_mut().zip(angles.to_array()).zip(scales.0) {
        let x = a / s;
        if x.abs() > 1.0 {
            clamped += 1;
        }
        *v = x.clamp(-1.0, 1.0);
    }
    Normalized { values, clamped }
}

pub fn angle_denormalize(values: &[f64], scales: &AngleScales) -> PoseAngles {
    PoseAngles::new(values[0] * scales.0[0], values[1] * scales.0[1], values[2] * scales.0[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_zero_pose() {
        let d = rotmat_to_euler(&Matrix3::identity()).unwrap();
        assert_eq!(d.angles, PoseAngles::ZERO);
        assert!(!d.gimbal_lock);
    }

    #[test]
    fn round_trip_example() {
        let a = PoseAngles::new(10.0, 20.0, 30.0);
        let back = rotmat_to_euler(&euler_to_rotmat(a)).unwrap().angles;
        for (x, y) in a.to_array().iter().zip(back.to_array()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn single_axis_yaw_rotates_about_z_only() {
        let m = euler_to_rotmat(PoseAngles::new(0.0, 0.0, 30.0));
        assert!((m * Vector3::z() - Vector3::z()).norm() < 1e-15);
        let (s, c) = 30f64.to_radians().sin_cos();
        assert!((m * Vector3::x() - Vector3::new(c, s, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn gimbal_lock_sets_roll_to_zero() {
        let m = euler_to_rotmat(PoseAngles::new(90.0, 25.0, 40.0));
        let d = rotmat_to_euler(&m).unwrap();
        assert!(d.gimbal_lock);
        assert_eq!(d.angles.roll, 0.0);
        // Same matrix reproduced by the collapsed angles.
        let back = euler_to_rotmat(d.angles);
        assert!((back - m).abs().max() < 1e-9);
    }

    #[test]
    fn rejects_non_rotations() {
        let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(rotmat_to_euler(&m), Err(Error::NotRotation(_))));
        let reflection = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
        assert!(rotmat_to_euler(&reflection).is_err());
    }

    #[test]
    fn frontal_body_maps_to_identity_in_camera() {
        assert!((pose_to_camera_rotation(PoseAngles::ZERO) - Matrix3::identity()).norm() < 1e-15);
        let a = PoseAngles::new(-12.0, 33.0, 70.0);
        let back = camera_rotation_to_pose(&pose_to_camera_rotation(a)).unwrap().angles;
        assert!((back.yaw - 70.0).abs() < 1e-9 && (back.roll - 33.0).abs() < 1e-9);
        assert!((head_axes().determinant() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn positive_yaw_turns_face_to_its_right() {
        // Forward (towards camera, -z) turns towards the subject's right, which
        // is camera -x for a frontal subject.
        let r = pose_to_camera_rotation(PoseAngles::new(0.0, 0.0, 90.0));
        let fwd = r * Vector3::new(0.0, 0.0, -1.0);
        assert!((fwd - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn normalization_examples() {
        let s = AngleScales::new([100.0, 70.0, 125.0]).unwrap();
        assert_eq!(angle_normalize(PoseAngles::ZERO, &s).values, [0.0; 3]);
        assert_eq!(angle_normalize(PoseAngles::new(50.0, 0.0, 0.0), &s).values[0], 0.5);
        let a = PoseAngles::new(-37.5, 12.25, 101.0);
        let n = angle_normalize(a, &s);
        assert_eq!(n.clamped, 0);
        let back = angle_denormalize(&n.values, &s);
        assert!((back.pitch - a.pitch).abs() < 1e-12 && (back.yaw - a.yaw).abs() < 1e-12);
        let n = angle_normalize(PoseAngles::new(150.0, -80.0, 0.0), &s);
        assert_eq!(n.clamped, 2);
        assert_eq!(n.values, [1.0, -1.0, 0.0]);
        assert!(AngleScales::new([1.0, 0.0, 1.0]).is_err());
        assert_eq!(AngleScales::from_meta(&s.to_meta()).unwrap(), s);
    }
}
