//! Torso frame from three skeleton joints.

use nalgebra::{Matrix3, Vector3};

use super::pose::{camera_rotation_to_pose, EulerDecomposition};
use crate::error::{Error, Result};

/// Unit vectors built from the left shoulder, right shoulder and spine base.
/// `[N1 N2 N3]` is orthonormal with determinant -1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShoulderFrame {
    pub n1: Vector3<f64>,
    pub n2: Vector3<f64>,
    pub n3: Vector3<f64>,
}

const DEGENERATE_EPS: f64 = 1e-9;

pub fn shoulder_frame(p_ls: Vector3<f64>, p_rs: Vector3<f64>, p_sb: Vector3<f64>) -> Result<ShoulderFrame> {
    let across = p_rs - p_ls;
    let down = p_rs - p_sb;
    if across.norm() <= DEGENERATE_EPS * p_ls.norm().max(1.0) {
        return Err(Error::DegenerateGeometry("left and right shoulder coincide".into()));
    }
    if down.norm() <= DEGENERATE_EPS * p_sb.norm().max(1.0) {
        return Err(Error::DegenerateGeometry("right shoulder and spine base coincide".into()));
    }
    let n1 = across.normalize();
    let u = down.normalize();
    let c = n1.cross(&u);
    if c.norm() <= DEGENERATE_EPS {
        return Err(Error::DegenerateGeometry("shoulder joints are collinear".into()));
    }
    let n3 = c.normalize();
    let n2 = n1.cross(&n3);
    Ok(ShoulderFrame { n1, n2, n3 })
}

impl ShoulderFrame {
    /// Columns `N1, N2, N3`.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.n1, self.n2, self.n3])
    }

    /// Proper rotation `[-N1, N2, N3]`. For a subject facing the camera
    /// (left shoulder at image right, spine base below) this is the identity.
    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[-self.n1, self.n2, self.n3])
    }

    /// Torso pitch, roll and yaw in the head angle convention.
    pub fn angles(&self) -> Result<EulerDecomposition> {
        camera_rotation_to_pose(&self.rotation())
    }
}
