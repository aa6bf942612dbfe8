//! Quaternion and rotation algebra.
//!
//! Quaternions are stored scalar-last, `q = [q_v; q_o]`, and map to rotation
//! matrices through `A(q) = I + 2 q_o [q_v x] + 2 [q_v x]^2`. An attitude
//! quaternion `q_b` therefore rotates body coordinates into inertial
//! coordinates, and its kinematics with a body-frame rate `w` are
//! `q_dot = 1/2 Omega(w) q`.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use std::ops::Mul;
use thiserror::Error;

/// Allowed deviation of `|q|` from one before a quaternion is rejected.
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("invalid quaternion: norm {norm} deviates from 1 by more than {UNIT_TOLERANCE:e}")]
    NonUnitQuaternion { norm: f64 },
}

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Unit attitude quaternion, vector part `v` and scalar part `w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub v: Vector3<f64>,
    pub w: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl Quaternion {
    pub fn new(v: Vector3<f64>, w: f64) -> Self {
        Self { v, w }
    }

    /// `q* = [0 0 0 1]`.
    pub fn identity() -> Self {
        Self { v: Vector3::zeros(), w: 1.0 }
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.normalize();
        let (s, c) = (0.5 * angle).sin_cos();
        Self { v: n * s, w: c }
    }

    /// Interprets `[x, y, z, w]`.
    pub fn from_vector(q: &Vector4<f64>) -> Self {
        Self { v: Vector3::new(q[0], q[1], q[2]), w: q[3] }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.v.x, self.v.y, self.v.z, self.w)
    }

    pub fn norm(&self) -> f64 {
        (self.v.norm_squared() + self.w * self.w).sqrt()
    }

    pub fn normalize(&self) -> Self {
        let n = self.norm();
        Self { v: self.v / n, w: self.w / n }
    }

    pub fn conjugate(&self) -> Self {
        Self { v: -self.v, w: self.w }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.v.dot(&other.v) + self.w * other.w
    }

    /// Representative of the same rotation with `q_o >= 0`.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            Self { v: -self.v, w: -self.w }
        } else {
            *self
        }
    }

    /// `A(q)` without the unit-norm check.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let s = skew(&self.v);
        Matrix3::identity() + 2.0 * self.w * s + 2.0 * s * s
    }

    /// Converts a proper rotation matrix into a quaternion with `q_o >= 0`.
    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Self {
        // Shepperd's method: pick the largest diagonal candidate for stability.
        let trace = m.trace();
        let q = if trace > m[(0, 0)] && trace > m[(1, 1)] && trace > m[(2, 2)] {
            let s = 2.0 * (1.0 + trace).sqrt();
            Self::new(
                Vector3::new(
                    (m[(2, 1)] - m[(1, 2)]) / s,
                    (m[(0, 2)] - m[(2, 0)]) / s,
                    (m[(1, 0)] - m[(0, 1)]) / s,
                ),
                0.25 * s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            Self::new(
                Vector3::new(
                    0.25 * s,
                    (m[(0, 1)] + m[(1, 0)]) / s,
                    (m[(0, 2)] + m[(2, 0)]) / s,
                ),
                (m[(2, 1)] - m[(1, 2)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
            Self::new(
                Vector3::new(
                    (m[(0, 1)] + m[(1, 0)]) / s,
                    0.25 * s,
                    (m[(1, 2)] + m[(2, 1)]) / s,
                ),
                (m[(0, 2)] - m[(2, 0)]) / s,
            )
        } else {
            let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
            Self::new(
                Vector3::new(
                    (m[(0, 2)] + m[(2, 0)]) / s,
                    (m[(1, 2)] + m[(2, 1)]) / s,
                    0.25 * s,
                ),
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        };
        q.normalize().canonical()
    }

    /// Rotation vector (axis times angle) of the short rotation.
    pub fn rotation_vector(&self) -> Vector3<f64> {
        let q = self.canonical();
        let s = q.v.norm();
        if s < 1e-12 {
            return 2.0 * q.v;
        }
        let angle = 2.0 * s.atan2(q.w);
        q.v * (angle / s)
    }
}

/// Hamilton product, so that `A(p * q) = A(p) A(q)`.
impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, rhs: Quaternion) -> Quaternion {
        Quaternion {
            v: self.w * rhs.v + rhs.w * self.v + self.v.cross(&rhs.v),
            w: self.w * rhs.w - self.v.dot(&rhs.v),
        }
    }
}

/// Proper orthonormal 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(pub Matrix3<f64>);

impl Rotation {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

/// `A(q)`; rejects quaternions whose norm is off by more than [`UNIT_TOLERANCE`].
pub fn quat_to_rotmat(q: &Quaternion) -> Result<Rotation, SpatialError> {
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(SpatialError::NonUnitQuaternion { norm });
    }
    Ok(Rotation(q.rotation_matrix()))
}

/// `Omega(w) = [[-[w x], w], [-w^T, 0]]`.
pub fn omega_matrix(w: &Vector3<f64>) -> Matrix4<f64> {
    Matrix4::new(
        0.0, w.z, -w.y, w.x, //
        -w.z, 0.0, w.x, w.y, //
        w.y, -w.x, 0.0, w.z, //
        -w.x, -w.y, -w.z, 0.0,
    )
}

/// `q_dot = 1/2 Omega(w) q` for a body-frame rate `w`.
pub fn quat_derivative(q: &Quaternion, w: &Vector3<f64>) -> Vector4<f64> {
    0.5 * omega_matrix(w) * q.to_vector()
}

/// Attitude of the base frame relative to the target frame, `q_t^-1 * q_b`,
/// with `q_o >= 0`.
///
/// `A(result)` maps base coordinates into target coordinates, so the
/// relative quaternion obeys `q_dot = 1/2 Omega(w_rel) q` with `w_rel` the
/// relative rate in base coordinates.
pub fn quat_error(q_target: &Quaternion, q_base: &Quaternion) -> Quaternion {
    (q_target.conjugate() * *q_base).canonical()
}

/// `w_rel = w_b - A_sb w_s`, where `A_sb = A(q_rel)^T` maps target
/// coordinates into base coordinates.
pub fn relative_rate(q_rel: &Quaternion, w_base: &Vector3<f64>, w_target: &Vector3<f64>) -> Vector3<f64> {
    w_base - q_rel.rotation_matrix().transpose() * w_target
}
