//! Rotation and rigid-pose algebra on SO(3): hat map, exponential and
//! logarithm maps, the right Jacobian, and pose composition.
//!
//! Rotations are stored canonically as axis-angle vectors so that pose
//! optimization is unconstrained; conversion to matrices happens at use
//! sites. All operations are pure and all types are immutable values.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Angle below which Rodrigues/log coefficients switch to Taylor expansions.
const SMALL_ANGLE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LieError {
    #[error("matrix is not a rotation: ||R^T R - I|| = {ortho_err:.3e}, det = {det:.6}")]
    NotARotation { ortho_err: f64, det: f64 },
}

/// Axis-angle rotation vector: direction is the rotation axis, norm is the
/// angle in radians. The zero vector is the identity rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vector3<f64>);

impl AxisAngle {
    pub fn zero() -> Self {
        AxisAngle(Vector3::zeros())
    }

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vector3::new(x, y, z))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    /// Unit rotation axis; arbitrary (z) for the identity rotation.
    pub fn axis(&self) -> Vector3<f64> {
        let n = self.0.norm();
        if n < SMALL_ANGLE {
            Vector3::z()
        } else {
            self.0 / n
        }
    }

    /// Wraps the encoded angle into [0, pi] by flipping the axis when needed.
    pub fn canonicalized(&self) -> Self {
        let angle = self.0.norm();
        if angle <= std::f64::consts::PI || angle < SMALL_ANGLE {
            return *self;
        }
        let axis = self.0 / angle;
        let wrapped = angle.rem_euclid(2.0 * std::f64::consts::PI);
        if wrapped <= std::f64::consts::PI {
            AxisAngle(axis * wrapped)
        } else {
            AxisAngle(-axis * (2.0 * std::f64::consts::PI - wrapped))
        }
    }

    pub fn to_matrix(&self) -> RotationMatrix {
        so3_exp(self)
    }
}

/// A validated 3x3 rotation matrix (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub const ORTHONORMALITY_TOL: f64 = 1e-9;

    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// Validates orthonormality and determinant before wrapping.
    pub fn try_new(m: Matrix3<f64>) -> Result<Self, LieError> {
        let ortho_err = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if ortho_err > Self::ORTHONORMALITY_TOL || (det - 1.0).abs() > Self::ORTHONORMALITY_TOL {
            return Err(LieError::NotARotation { ortho_err, det });
        }
        Ok(RotationMatrix(m))
    }

    /// Wraps a matrix that is a rotation by construction (e.g. a product of
    /// rotations). Debug builds still assert validity.
    pub(crate) fn from_rotation_unchecked(m: Matrix3<f64>) -> Self {
        debug_assert!(
            (m.transpose() * m - Matrix3::identity()).norm() < 1e-7,
            "from_rotation_unchecked got a non-rotation"
        );
        RotationMatrix(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> RotationMatrix {
        RotationMatrix(self.0.transpose())
    }
}

impl std::ops::Mul<&RotationMatrix> for &RotationMatrix {
    type Output = RotationMatrix;
    fn mul(self, rhs: &RotationMatrix) -> RotationMatrix {
        RotationMatrix::from_rotation_unchecked(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vector3<f64>> for &RotationMatrix {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// Skew-symmetric matrix of `theta`: `hat(theta) * x == theta x x`.
pub fn hat(theta: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -theta.z, theta.y, //
        theta.z, 0.0, -theta.x, //
        -theta.y, theta.x, 0.0,
    )
}

/// Rodrigues formula `R = I + (sin a / a) hat(t) + ((1 - cos a) / a^2) hat(t)^2`,
/// with 4th-order Taylor coefficients below the small-angle threshold.
pub fn so3_exp(theta: &AxisAngle) -> RotationMatrix {
    let t = theta.0;
    let angle = t.norm();
    let th = hat(&t);
    let (c1, c2) = if angle < SMALL_ANGLE {
        let a2 = angle * angle;
        // sin a / a = 1 - a^2/6 + a^4/120; (1 - cos a)/a^2 = 1/2 - a^2/24 + a^4/720
        (1.0 - a2 / 6.0 + a2 * a2 / 120.0, 0.5 - a2 / 24.0 + a2 * a2 / 720.0)
    } else {
        (angle.sin() / angle, (1.0 - angle.cos()) / (angle * angle))
    };
    RotationMatrix::from_rotation_unchecked(Matrix3::identity() + c1 * th + c2 * th * th)
}

/// Logarithm map returning a canonical axis-angle with angle in [0, pi].
///
/// Handles three branches: small angles (Taylor), the generic case via the
/// skew part of R, and angles near pi where the skew part degenerates and the
/// axis is recovered from the largest diagonal of `(R + I) / 2`.
pub fn so3_log(rotation: &RotationMatrix) -> AxisAngle {
    let r = rotation.matrix();
    // vee(R - R^T) = 2 sin(angle) * axis
    let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin_angle = v.norm() / 2.0;
    let cos_angle = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    // atan2 stays well conditioned where acos of a near-(-1) cosine is not.
    let angle = sin_angle.atan2(cos_angle);

    if angle < SMALL_ANGLE {
        return AxisAngle(0.5 * v);
    }

    if std::f64::consts::PI - angle > 1e-4 {
        return AxisAngle(v * (angle / (2.0 * sin_angle)));
    }

    // Near pi the skew part vanishes; the symmetric part
    // (R + R^T)/2 = cos a I + (1 - cos a) axis axis^T
    // recovers the axis from its largest-diagonal column.
    let s = (r + r.transpose()) / 2.0;
    let diag = [s[(0, 0)], s[(1, 1)], s[(2, 2)]];
    let k = if diag[0] >= diag[1] && diag[0] >= diag[2] {
        0
    } else if diag[1] >= diag[2] {
        1
    } else {
        2
    };
    let one_minus_cos = 1.0 - cos_angle;
    let axis_k = ((diag[k] - cos_angle) / one_minus_cos).max(0.0).sqrt();
    let mut axis = Vector3::zeros();
    axis[k] = axis_k;
    for i in 0..3 {
        if i != k {
            axis[i] = s[(i, k)] / (one_minus_cos * axis_k);
        }
    }
    axis.normalize_mut();
    // Fix the sign using the (small but nonzero away from exactly pi) skew part.
    let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if v.dot(&axis) < 0.0 {
        axis = -axis;
    }
    AxisAngle(axis * angle)
}

/// Validates `m` as a rotation and takes its logarithm.
pub fn so3_log_matrix(m: &Matrix3<f64>) -> Result<AxisAngle, LieError> {
    Ok(so3_log(&RotationMatrix::try_new(*m)?))
}

/// Right Jacobian of SO(3):
/// `J_r = I - ((1 - cos a)/a^2) hat(t) + ((a - sin a)/a^3) hat(t)^2`,
/// with Taylor coefficients below the small-angle threshold. Maps additive
/// perturbations of the axis-angle vector to multiplicative perturbations of
/// the rotation: `exp(t + d) ~ exp(t) exp(J_r(t) d)`.
pub fn so3_right_jacobian(theta: &AxisAngle) -> Matrix3<f64> {
    let t = theta.0;
    let angle = t.norm();
    let th = hat(&t);
    let (c1, c2) = if angle < SMALL_ANGLE {
        let a2 = angle * angle;
        // (1 - cos a)/a^2 = 1/2 - a^2/24 + a^4/720; (a - sin a)/a^3 = 1/6 - a^2/120 + a^4/5040
        (0.5 - a2 / 24.0 + a2 * a2 / 720.0, 1.0 / 6.0 - a2 / 120.0 + a2 * a2 / 5040.0)
    } else {
        let a2 = angle * angle;
        ((1.0 - angle.cos()) / a2, (angle - angle.sin()) / (a2 * angle))
    };
    Matrix3::identity() - c1 * th + c2 * th * th
}

/// Rigid pose: rotation stored as axis-angle plus a translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: AxisAngle,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: AxisAngle::zero(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: AxisAngle, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    pub fn from_parts(rotation: &RotationMatrix, translation: Vector3<f64>) -> Self {
        Pose { rotation: so3_log(rotation), translation }
    }

    pub fn rotation_matrix(&self) -> RotationMatrix {
        so3_exp(&self.rotation)
    }

    /// Applies the pose to a point: `R p + t`.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix().matrix() * p + self.translation
    }
}

/// Group composition `(a * b)(p) = a(b(p))`.
pub fn pose_compose(a: &Pose, b: &Pose) -> Pose {
    let ra = a.rotation_matrix();
    let rb = b.rotation_matrix();
    Pose {
        rotation: so3_log(&(&ra * &rb)),
        translation: ra.matrix() * b.translation + a.translation,
    }
}

/// Group inverse: `inv(a)(p) = R^T (p - t)`.
pub fn pose_inverse(a: &Pose) -> Pose {
    let rt = a.rotation_matrix().transpose();
    Pose { rotation: so3_log(&rt), translation: -(rt.matrix() * a.translation) }
}
