//! Crop geometry, losses, the torso frame and the angle convention.

mod bbox;
mod loss;
mod pose;
mod shoulder;

pub use bbox::{
    head_bbox, mean_valid_depth, shoulder_bbox, BoundingBox, CameraIntrinsics, HEAD_EXTENT_MM,
    SHOULDER_EXTENT_FLAT_MM, SHOULDER_EXTENT_MM,
};
pub use loss::{ffd_loss, l2_loss, weighted_l2, GaussianMask, ANGLE_WEIGHTS, MASK_ALPHA, MASK_BETA};
pub use pose::{
    angle_denormalize, angle_normalize, camera_rotation_to_pose, euler_to_rotmat, head_axes, pose_to_camera_rotation,
    rotmat_to_euler, AngleScales, EulerDecomposition, Normalized, PoseAngles, EULER_CONVENTION,
    ORTHONORMAL_TOLERANCE, TANH_TARGET_LIMIT,
};
pub use shoulder::{shoulder_frame, ShoulderFrame};
