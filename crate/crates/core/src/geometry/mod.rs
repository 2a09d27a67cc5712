//! Core geometry: SE(3) poses, the pinhole projection pair, pixel warping
//! between views and sub-pixel image sampling with gradients.
//!
//! Every transform in the crate follows one convention: a pose written
//! `b_from_a` maps a-frame coordinates into b-frame coordinates,
//! `p_b = R p_a + t`. All types here are immutable after construction and all
//! operations are pure functions.

mod camera;
mod image;
mod pose;

pub use camera::{warp_pixel, CameraModel, Pixel};
pub use image::{Image, ImagePyramid, PgmError};
pub use pose::{se3_exp, se3_log, Pose, Twist};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    /// Projection or unprojection asked for a point at or behind the camera.
    #[error("non-positive depth {0}")]
    NonPositiveDepth(f64),
    /// A warped point landed behind the destination camera.
    #[error("point behind destination camera (z = {0})")]
    BehindCamera(f64),
    /// Sample position outside the valid interior sampling region.
    #[error("pixel ({u}, {v}) outside the valid sampling region")]
    OutOfBounds { u: f64, v: f64 },
    /// Rotation angle at (or numerically indistinguishable from) pi, where
    /// the logarithm map is not unique.
    #[error("rotation angle too close to pi for a stable logarithm")]
    NearSingularRotation,
    /// Camera intrinsics violate their invariants.
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
}
