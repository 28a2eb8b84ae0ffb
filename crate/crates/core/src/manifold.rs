//! Quaternion and SO(3) primitives.
//!
//! Conventions: Hamilton product, scalar-first storage `(w, x, y, z)`, and a
//! quaternion `q` maps body-frame vectors into the world frame. Orientation
//! errors are body-frame (right) perturbations: `q_true = q ⊗ exp(δθ)`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Element of so(3); its norm is the rotation angle in radians.
pub type RotationVector = Vector3<f64>;

/// Orthonormal 3×3 matrix with determinant +1.
pub type RotationMatrix = Matrix3<f64>;

/// Below this angle (radians) exp/log switch to their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Unit quaternion `(w, x, y, z)` representing a body→world rotation.
///
/// Equality is on rotations: `q == -q`.
#[derive(Clone, Copy, Debug)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    /// Builds a unit quaternion from raw components, normalising them.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        if !(w.is_finite() && x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite quaternion ({w}, {x}, {y}, {z})"
            )));
        }
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if n < 1e-150 {
            return Err(Error::InvalidInput("zero-norm quaternion".into()));
        }
        Ok(Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        Self::exp(&(axis * (angle / n)))
    }

    #[inline]
    pub fn w(&self) -> f64 {
        self.w
    }
    #[inline]
    pub fn x(&self) -> f64 {
        self.x
    }
    #[inline]
    pub fn y(&self) -> f64 {
        self.y
    }
    #[inline]
    pub fn z(&self) -> f64 {
        self.z
    }

    /// Vector part `(x, y, z)`.
    #[inline]
    pub fn imag(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Inverse rotation (the conjugate, for a unit quaternion).
    #[inline]
    pub fn inverse(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// The same rotation with `w >= 0`.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            Self {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            *self
        }
    }

    fn renormalized(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        }
    }

    /// Exponential map so(3) → S³.
    pub fn exp(v: &RotationVector) -> Self {
        let theta2 = v.norm_squared();
        let theta = theta2.sqrt();
        if theta < SMALL_ANGLE {
            // second-order Taylor expansion of cos(θ/2) and sin(θ/2)/θ
            let w = 1.0 - theta2 / 8.0;
            let s = 0.5 - theta2 / 48.0;
            Self::renormalized(w, v.x * s, v.y * s, v.z * s)
        } else {
            let half = 0.5 * theta;
            let s = half.sin() / theta;
            Self::renormalized(half.cos(), v.x * s, v.y * s, v.z * s)
        }
    }

    /// Principal logarithm S³ → so(3), with angle in `[0, π]`.
    pub fn log(&self) -> RotationVector {
        let q = self.canonical();
        let imag = q.imag();
        let n = imag.norm();
        if n < 0.5 * SMALL_ANGLE {
            // angle ≈ 2n; 2·atan(n/w)/n ≈ (2/w)(1 − n²/(3w²))
            let scale = 2.0 / q.w * (1.0 - n * n / (3.0 * q.w * q.w));
            imag * scale
        } else {
            let angle = 2.0 * n.atan2(q.w);
            imag * (angle / n)
        }
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let q = self.canonical();
        2.0 * q.imag().norm().atan2(q.w)
    }

    /// Angle of the relative rotation `self⁻¹ ⊗ other`.
    pub fn angle_to(&self, other: &UnitQuaternion) -> f64 {
        (self.inverse() * *other).angle()
    }

    pub fn to_rotation_matrix(&self) -> RotationMatrix {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let (xy, xz, yz) = (x * y, x * z, y * z);
        let (wx, wy, wz) = (w * x, w * y, w * z);
        Matrix3::new(
            1.0 - 2.0 * (yy + zz),
            2.0 * (xy - wz),
            2.0 * (xz + wy),
            2.0 * (xy + wz),
            1.0 - 2.0 * (xx + zz),
            2.0 * (yz - wx),
            2.0 * (xz - wy),
            2.0 * (yz + wx),
            1.0 - 2.0 * (xx + yy),
        )
    }

    /// Shepperd's method; the input is assumed orthonormal.
    pub fn from_rotation_matrix(m: &RotationMatrix) -> Self {
        let tr = m.trace();
        let (w, x, y, z);
        if tr > m[(0, 0)] && tr > m[(1, 1)] && tr > m[(2, 2)] {
            let s = 2.0 * (1.0 + tr).sqrt();
            w = 0.25 * s;
            x = (m[(2, 1)] - m[(1, 2)]) / s;
            y = (m[(0, 2)] - m[(2, 0)]) / s;
            z = (m[(1, 0)] - m[(0, 1)]) / s;
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            w = (m[(2, 1)] - m[(1, 2)]) / s;
            x = 0.25 * s;
            y = (m[(0, 1)] + m[(1, 0)]) / s;
            z = (m[(0, 2)] + m[(2, 0)]) / s;
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
            w = (m[(0, 2)] - m[(2, 0)]) / s;
            x = (m[(0, 1)] + m[(1, 0)]) / s;
            y = 0.25 * s;
            z = (m[(1, 2)] + m[(2, 1)]) / s;
        } else {
            let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
            w = (m[(1, 0)] - m[(0, 1)]) / s;
            x = (m[(0, 2)] + m[(2, 0)]) / s;
            y = (m[(1, 2)] + m[(2, 1)]) / s;
            z = 0.25 * s;
        }
        Self::renormalized(w, x, y, z).canonical()
    }

    /// Rotates a body-frame vector into the world frame.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let u = self.imag();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    /// ZYX (yaw-pitch-roll) Euler angles in radians, returned as `(roll, pitch, yaw)`.
    pub fn to_euler_zyx(&self) -> (f64, f64, f64) {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let roll = (2.0 * (w * x + y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
        let sp = (2.0 * (w * y - z * x)).clamp(-1.0, 1.0);
        let pitch = sp.asin();
        let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
        (roll, pitch, yaw)
    }

    pub fn from_euler_zyx(roll: f64, pitch: f64, yaw: f64) -> Self {
        let (sr, cr) = (0.5 * roll).sin_cos();
        let (sp, cp) = (0.5 * pitch).sin_cos();
        let (sy, cy) = (0.5 * yaw).sin_cos();
        Self::renormalized(
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        )
    }

    /// True when both represent the same rotation within `tol` on the components.
    pub fn approx_eq(&self, other: &UnitQuaternion, tol: f64) -> bool {
        let a = self.canonical();
        let mut b = other.canonical();
        // w == 0 leaves the sign ambiguous
        if a.w.abs() < tol && a.imag().dot(&b.imag()) < 0.0 {
            b = Self {
                w: -b.w,
                x: -b.x,
                y: -b.y,
                z: -b.z,
            };
        }
        (a.w - b.w).abs() <= tol
            && (a.x - b.x).abs() <= tol
            && (a.y - b.y).abs() <= tol
            && (a.z - b.z).abs() <= tol
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl PartialEq for UnitQuaternion {
    fn eq(&self, other: &Self) -> bool {
        let same = self.w == other.w && self.x == other.x && self.y == other.y && self.z == other.z;
        let flipped =
            self.w == -other.w && self.x == -other.x && self.y == -other.y && self.z == -other.z;
        same || flipped
    }
}

impl fmt::Display for UnitQuaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.w, self.x, self.y, self.z)
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;

    /// Hamilton product, renormalised.
    #[inline]
    fn mul(self, b: UnitQuaternion) -> UnitQuaternion {
        let a = self;
        UnitQuaternion::renormalized(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

fn check_unit(q: &UnitQuaternion, name: &str) -> Result<()> {
    if !q.is_finite() {
        return Err(Error::InvalidInput(format!("{name} is not finite: {q}")));
    }
    if (q.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "{name} is not unit-norm (|q| = {})",
            q.norm()
        )));
    }
    Ok(())
}

/// Checked Hamilton product `a ⊗ b`.
pub fn quat_mul(a: &UnitQuaternion, b: &UnitQuaternion) -> Result<UnitQuaternion> {
    check_unit(a, "left operand")?;
    check_unit(b, "right operand")?;
    Ok(*a * *b)
}

/// Checked exponential map.
pub fn so3_exp(v: &RotationVector) -> Result<UnitQuaternion> {
    if !v.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite rotation vector {:?}",
            v.as_slice()
        )));
    }
    Ok(UnitQuaternion::exp(v))
}

pub fn so3_log(q: &UnitQuaternion) -> RotationVector {
    q.log()
}

pub fn to_rotation_matrix(q: &UnitQuaternion) -> RotationMatrix {
    q.to_rotation_matrix()
}

/// `[v]×`, so that `skew(v) * u == v.cross(u)`.
#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn identity_is_neutral() {
        let q = UnitQuaternion::new(0.3, -0.2, 0.9, 0.1).unwrap();
        let r = quat_mul(&UnitQuaternion::identity(), &q).unwrap();
        assert!(r.approx_eq(&q, 1e-15));
        let e = quat_mul(&q, &q.inverse()).unwrap();
        assert!(e.approx_eq(&UnitQuaternion::identity(), 1e-15));
    }

    #[test]
    fn two_quarter_turns_about_z() {
        let qz = UnitQuaternion::from_axis_angle(&Vector3::z(), FRAC_PI_2);
        let composed = qz * qz;
        // oracle: matrix product converted back
        let m = qz.to_rotation_matrix() * qz.to_rotation_matrix();
        let from_m = UnitQuaternion::from_rotation_matrix(&m);
        assert!(composed.approx_eq(&from_m, 1e-12));
        assert!(composed.approx_eq(&UnitQuaternion::new(0.0, 0.0, 0.0, 1.0).unwrap(), 1e-12));
    }

    #[test]
    fn non_finite_operands_are_rejected() {
        let bad = UnitQuaternion {
            w: f64::NAN,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        };
        assert!(matches!(
            quat_mul(&bad, &UnitQuaternion::identity()),
            Err(Error::InvalidInput(_))
        ));
        assert!(so3_exp(&Vector3::new(f64::INFINITY, 0.0, 0.0)).is_err());
        assert!(UnitQuaternion::new(0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn exp_examples() {
        assert_eq!(
            so3_exp(&Vector3::zeros()).unwrap(),
            UnitQuaternion::identity()
        );
        let q = so3_exp(&Vector3::new(PI, 0.0, 0.0)).unwrap();
        assert!(q.approx_eq(&UnitQuaternion::new(0.0, 1.0, 0.0, 0.0).unwrap(), 1e-15));
        let tiny = so3_exp(&Vector3::new(1e-12, 0.0, 0.0)).unwrap();
        assert_relative_eq!(tiny.w(), 1.0);
        assert_relative_eq!(tiny.x(), 5e-13, max_relative = 1e-12);
    }

    #[test]
    fn log_examples() {
        assert_eq!(UnitQuaternion::identity().log(), Vector3::zeros());
        let v = UnitQuaternion::new(0.0, 1.0, 0.0, 0.0).unwrap().log();
        assert_relative_eq!(v, Vector3::new(PI, 0.0, 0.0), epsilon = 1e-15);
        // w < 0 handled by the canonical sign
        let q = UnitQuaternion::exp(&Vector3::new(0.0, 0.4, 0.0));
        let neg = UnitQuaternion {
            w: -q.w,
            x: -q.x,
            y: -q.y,
            z: -q.z,
        };
        assert_relative_eq!(neg.log(), Vector3::new(0.0, 0.4, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn tiny_magnitudes_stay_finite() {
        for mag in [1e-300, 1e-200, 1e-100, 1e-20, 1e-9] {
            let v = Vector3::new(mag, -mag, 0.5 * mag);
            let q = UnitQuaternion::exp(&v);
            assert!(q.is_finite());
            let back = q.log();
            assert!(back.iter().all(|c| c.is_finite()));
            assert_relative_eq!(back, v, max_relative = 1e-12);
            assert!(q.to_rotation_matrix().iter().all(|c| c.is_finite()));
        }
    }

    #[test]
    fn rotation_matrix_examples() {
        assert_eq!(
            to_rotation_matrix(&UnitQuaternion::identity()),
            Matrix3::identity()
        );
        let qz = UnitQuaternion::from_axis_angle(&Vector3::z(), FRAC_PI_2);
        let r = qz.to_rotation_matrix() * Vector3::x();
        assert_relative_eq!(r, Vector3::y(), epsilon = 1e-12);
        assert_relative_eq!(qz.rotate(&Vector3::x()), Vector3::y(), epsilon = 1e-12);
    }

    #[test]
    fn skew_examples() {
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        let v = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(skew(&v) * v, Vector3::zeros());
        let u = Vector3::new(-0.5, 4.0, 0.25);
        assert_relative_eq!(skew(&v) * u, v.cross(&u));
        assert_eq!(skew(&v).transpose(), -skew(&v));
    }

    #[test]
    fn sign_equivalence() {
        let q = UnitQuaternion::new(0.5, 0.5, -0.5, 0.5).unwrap();
        let neg = UnitQuaternion::new(-0.5, -0.5, 0.5, -0.5).unwrap();
        assert_eq!(q, neg);
        assert_eq!(q.angle_to(&neg), 0.0);
    }

    #[test]
    fn euler_round_trip() {
        let q = UnitQuaternion::from_euler_zyx(0.1, -0.3, 2.5);
        let (r, p, y) = q.to_euler_zyx();
        assert_relative_eq!(r, 0.1, epsilon = 1e-12);
        assert_relative_eq!(p, -0.3, epsilon = 1e-12);
        assert_relative_eq!(y, 2.5, epsilon = 1e-12);
        let m = q.to_rotation_matrix();
        let expected = nalgebra::Rotation3::from_euler_angles(0.1, -0.3, 2.5);
        assert_relative_eq!(m, *expected.matrix(), epsilon = 1e-12);
    }
}
