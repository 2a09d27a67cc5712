use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Vector3};

use super::GeometryError;

/// Rigid transform on SE(3), stored as a rotation matrix plus translation.
///
/// A pose named `b_from_a` maps a-frame coordinates into b-frame coordinates:
/// `p_b = R p_a + t`. Matrix storage keeps the long chained products cheap;
/// [`Pose::orthonormalized`] re-enforces orthonormality after long chains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    /// Builds a pose from a 4x4 homogeneous matrix (upper-left 3x3 rotation,
    /// right column translation). The bottom row is ignored.
    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    /// Projects the rotation back onto SO(3) via SVD. Used after long chains
    /// of products and after every optimizer update.
    pub fn orthonormalized(&self) -> Pose {
        let svd = self.rotation.svd(true, true);
        let u = svd.u.expect("3x3 svd");
        let v_t = svd.v_t.expect("3x3 svd");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Pose::new(r, self.translation)
    }

    /// Maximum deviation of `R^T R` from the identity plus the determinant
    /// error; used by calibration validation and tests.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation;
        let mut err: f64 = (self.rotation.determinant() - 1.0).abs();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((gram[(i, j)] - target).abs());
            }
        }
        err
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;

    /// Composition `self * rhs` applies `rhs` first: if `rhs = b_from_a` and
    /// `self = c_from_b` the product is `c_from_a`.
    fn mul(self, rhs: &Pose) -> Pose {
        Pose::new(
            self.rotation * rhs.rotation,
            self.rotation * rhs.translation + self.translation,
        )
    }
}

impl Mul<Pose> for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        &self * &rhs
    }
}

/// Element of se(3): a rotation vector (radians) and a translation part
/// (meters). This is the 6-dof parameterization used by every optimizer in
/// the crate; vector layout is rotation first, translation second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl Twist {
    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn norm(&self) -> f64 {
        (self.rotation.norm_squared() + self.translation.norm_squared()).sqrt()
    }
}

pub(crate) fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Exponential map se(3) -> SE(3).
pub fn se3_exp(t: &Twist) -> Pose {
    let theta_sq = t.rotation.norm_squared();
    let theta = theta_sq.sqrt();
    let w = skew(&t.rotation);
    let w_sq = w * w;

    // R = I + A W + B W^2, V = I + B W + C W^2 with the usual series guards.
    let (a, b, c) = if theta < 1e-6 {
        (
            1.0 - theta_sq / 6.0,
            0.5 - theta_sq / 24.0,
            1.0 / 6.0 - theta_sq / 120.0,
        )
    } else {
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / theta_sq;
        let c = (1.0 - a) / theta_sq;
        (a, b, c)
    };

    let rotation = Matrix3::identity() + w * a + w_sq * b;
    let v = Matrix3::identity() + w * b + w_sq * c;
    Pose::new(rotation, v * t.translation)
}

/// Logarithm map SE(3) -> se(3). Requires the rotation angle to be below pi;
/// rotations at (or numerically at) pi are rejected.
pub fn se3_log(p: &Pose) -> Result<Twist, GeometryError> {
    let cos_theta = ((p.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let half_diff = Vector3::new(
        p.rotation[(2, 1)] - p.rotation[(1, 2)],
        p.rotation[(0, 2)] - p.rotation[(2, 0)],
        p.rotation[(1, 0)] - p.rotation[(0, 1)],
    ) * 0.5;
    // half_diff = sin(theta) * axis; atan2 of its norm keeps the angle well
    // conditioned where acos of the trace is not.
    let sin_theta = half_diff.norm();
    let theta = sin_theta.atan2(cos_theta);
    if theta > PI - 1e-9 {
        return Err(GeometryError::NearSingularRotation);
    }
    let scale = if theta < 1e-6 {
        1.0 + theta * theta / 6.0
    } else {
        theta / sin_theta
    };
    let omega = half_diff * scale;

    let w = skew(&omega);
    let w_sq = w * w;
    let theta_sq = theta * theta;
    let g = if theta < 1e-6 {
        1.0 / 12.0 + theta_sq / 720.0
    } else {
        (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / theta_sq
    };
    let v_inv = Matrix3::identity() - w * 0.5 + w_sq * g;
    Ok(Twist::new(omega, v_inv * p.translation))
}
