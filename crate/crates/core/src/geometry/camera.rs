use nalgebra::Vector3;

use super::{GeometryError, Pose};

/// Sub-pixel image coordinates, `u` along columns and `v` along rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        ((self.u - other.u).powi(2) + (self.v - other.v).powi(2)).sqrt()
    }
}

/// Pinhole camera intrinsics plus image dimensions.
///
/// Owns the projection `u = (fx x/z + cx, fy y/z + cy)` and its inverse.
/// Pixel centers sit at integer coordinates starting at (0, 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal lengths must be positive (fx = {fx}, fy = {fy})"
            )));
        }
        if !(0.0..(width as f64)).contains(&cx) || !(0.0..(height as f64)).contains(&cy) {
            return Err(GeometryError::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside the {width}x{height} image"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Projects a camera-frame point with positive depth to a pixel. The
    /// result may lie outside the image bounds; callers check.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Result<Pixel, GeometryError> {
        if p_cam.z <= 0.0 {
            return Err(GeometryError::NonPositiveDepth(p_cam.z));
        }
        Ok(Pixel::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ))
    }

    /// Recovers the camera-frame point at depth `d` behind pixel `u`; the
    /// returned point has `z = d` exactly.
    pub fn unproject(&self, u: &Pixel, depth: f64) -> Result<Vector3<f64>, GeometryError> {
        if depth <= 0.0 {
            return Err(GeometryError::NonPositiveDepth(depth));
        }
        Ok(Vector3::new(
            (u.u - self.cx) / self.fx * depth,
            (u.v - self.cy) / self.fy * depth,
            depth,
        ))
    }

    /// True when `u` lies at least `margin` pixels inside the image border.
    pub fn contains(&self, u: &Pixel, margin: f64) -> bool {
        u.u >= margin
            && u.v >= margin
            && u.u <= self.width as f64 - 1.0 - margin
            && u.v <= self.height as f64 - 1.0 - margin
    }

    /// Camera model for pyramid level `level` (factor-2 downscaling with the
    /// half-pixel-center convention; level 0 is `self`).
    pub fn at_level(&self, level: usize) -> CameraModel {
        let s = 0.5f64.powi(level as i32);
        CameraModel {
            fx: self.fx * s,
            fy: self.fy * s,
            cx: (self.cx + 0.5) * s - 0.5,
            cy: (self.cy + 0.5) * s - 0.5,
            width: self.width >> level,
            height: self.height >> level,
        }
    }
}

/// Maps a pixel of the source camera with known depth into the destination
/// camera: `u' = project(dst_from_src * unproject(u, d))`.
pub fn warp_pixel(
    cam_src: &CameraModel,
    cam_dst: &CameraModel,
    dst_from_src: &Pose,
    u: &Pixel,
    depth: f64,
) -> Result<Pixel, GeometryError> {
    let p_src = cam_src.unproject(u, depth)?;
    let p_dst = dst_from_src.transform(&p_src);
    if p_dst.z <= 0.0 {
        return Err(GeometryError::BehindCamera(p_dst.z));
    }
    cam_dst.project(&p_dst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{se3_exp, Twist};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cam_100() -> CameraModel {
        CameraModel::new(100.0, 100.0, 50.0, 50.0, 101, 101).unwrap()
    }

    #[test]
    fn optical_axis_point_projects_to_principal_point() {
        let u = cam_100().project(&Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_relative_eq!(u.u, 50.0);
        assert_relative_eq!(u.v, 50.0);
    }

    #[test]
    fn off_axis_projection_matches_hand_arithmetic() {
        // u = fx * x / z + cx = 100 * 1 / 2 + 50 = 100.
        let u = cam_100().project(&Vector3::new(1.0, 0.0, 2.0)).unwrap();
        assert_relative_eq!(u.u, 100.0);
        assert_relative_eq!(u.v, 50.0);
    }

    #[test]
    fn zero_depth_rejected() {
        assert!(matches!(
            cam_100().project(&Vector3::new(0.0, 0.0, 0.0)),
            Err(GeometryError::NonPositiveDepth(_))
        ));
        assert!(matches!(
            cam_100().unproject(&Pixel::new(50.0, 50.0), 0.0),
            Err(GeometryError::NonPositiveDepth(_))
        ));
    }

    #[test]
    fn unproject_principal_point_lands_on_axis() {
        let p = cam_100().unproject(&Pixel::new(50.0, 50.0), 2.0).unwrap();
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, 2.0), epsilon = 1e-12);
    }

    #[test]
    fn identity_warp_is_identity() {
        let cam = cam_100();
        let u = Pixel::new(37.25, 62.5);
        let w = warp_pixel(&cam, &cam, &Pose::identity(), &u, 3.7).unwrap();
        assert_relative_eq!(w.u, u.u, epsilon = 1e-9);
        assert_relative_eq!(w.v, u.v, epsilon = 1e-9);
    }

    #[test]
    fn translation_warp_matches_hand_arithmetic() {
        // Point unprojects to (0,0,2); shifting x by +1 reprojects to
        // u = 100 * 1 / 2 + 50 = 100.
        let cam = cam_100();
        let t = Pose::new(nalgebra::Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0));
        let w = warp_pixel(&cam, &cam, &t, &Pixel::new(50.0, 50.0), 2.0).unwrap();
        assert_relative_eq!(w.u, 100.0, epsilon = 1e-12);
        assert_relative_eq!(w.v, 50.0, epsilon = 1e-12);
    }

    #[test]
    fn warp_behind_destination_camera_rejected() {
        let cam = cam_100();
        // Half turn about y sends the forward point behind the destination.
        let t = se3_exp(&Twist::new(Vector3::new(0.0, 3.1, 0.0), Vector3::zeros()));
        assert!(matches!(
            warp_pixel(&cam, &cam, &t, &Pixel::new(50.0, 50.0), 2.0),
            Err(GeometryError::BehindCamera(_))
        ));
    }

    #[test]
    fn level_scaling_preserves_rays() {
        let cam = CameraModel::new(190.0, 190.0, 160.0, 120.0, 320, 240).unwrap();
        let lvl = cam.at_level(2);
        assert_eq!(lvl.width, 80);
        // A level-0 pixel and its scaled counterpart unproject to the same ray.
        let u0 = Pixel::new(200.0, 100.0);
        let s = 0.25;
        let u2 = Pixel::new((u0.u + 0.5) * s - 0.5, (u0.v + 0.5) * s - 0.5);
        let p0 = cam.unproject(&u0, 5.0).unwrap();
        let p2 = lvl.unproject(&u2, 5.0).unwrap();
        assert_relative_eq!(p0, p2, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn project_unproject_roundtrip(
            x in -3.0f64..3.0, y in -3.0f64..3.0, z in 0.2f64..50.0,
        ) {
            let cam = cam_100();
            let p = Vector3::new(x, y, z);
            let u = cam.project(&p).unwrap();
            let back = cam.unproject(&u, z).unwrap();
            prop_assert!((back - p).norm() < 1e-9);
        }

        #[test]
        fn unproject_project_roundtrip(
            u in 0.0f64..100.0, v in 0.0f64..100.0, d in 0.1f64..80.0,
        ) {
            let cam = cam_100();
            let px = Pixel::new(u, v);
            let p = cam.unproject(&px, d).unwrap();
            let back = cam.project(&p).unwrap();
            prop_assert!(back.distance(&px) < 1e-9);
        }
    }
}
