//! Rigid transforms in SE(3) and the exponential map used for rotation increments.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat4 = Matrix4<f64>;

/// Tolerance on `R Rᵀ - I` and `det R - 1` accepted as a proper rotation.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

/// Rigid transformation `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(Mat3::identity(), translation)
    }

    pub fn from_axis_angle(axis_angle: Vec3, translation: Vec3) -> Self {
        Self::new(exp_so3(&axis_angle), translation)
    }

    /// `self * rhs`: apply `rhs` first, then `self`.
    pub fn compose(&self, rhs: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_inverse(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn to_matrix(&self) -> Mat4 {
        let mut m = Mat4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Reads the rigid part of a homogeneous matrix; the bottom row is ignored.
    pub fn from_matrix(m: &Mat4) -> RigidTransform {
        RigidTransform {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    pub fn is_rigid(&self) -> bool {
        is_rotation(&self.rotation) && self.translation.iter().all(|v| v.is_finite())
    }

    /// Left-multiplies the rotation by `exp(omega)` and shifts the translation by `delta`.
    pub fn perturbed(&self, omega: &Vec3, delta: &Vec3) -> RigidTransform {
        RigidTransform {
            rotation: exp_so3(omega) * self.rotation,
            translation: self.translation + delta,
        }
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

pub fn is_rotation(r: &Mat3) -> bool {
    if r.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let err = (r * r.transpose() - Mat3::identity()).abs().max();
    err <= ORTHONORMAL_TOL && (r.determinant() - 1.0).abs() <= ORTHONORMAL_TOL
}

/// Row-major flattening, the layout used by every file and wire format.
pub fn rotation_to_row_major(r: &Mat3) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[3 * i + j] = r[(i, j)];
        }
    }
    out
}

pub fn rotation_from_row_major(v: &[f64; 9]) -> Mat3 {
    Mat3::from_row_slice(v)
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula; exact identity for a zero vector.
pub fn exp_so3(omega: &Vec3) -> Mat3 {
    let theta = omega.norm();
    if theta == 0.0 {
        return Mat3::identity();
    }
    let k = skew(&(omega / theta));
    Mat3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos())
}

/// Axis-angle vector of a rotation matrix, angle in `[0, π]`.
pub fn log_so3(r: &Mat3) -> Vec3 {
    let rot = Rotation3::from_matrix_unchecked(*r);
    rot.scaled_axis()
}

/// Geodesic angle between two rotations in radians.
pub fn rotation_angle_between(a: &Mat3, b: &Mat3) -> f64 {
    let rel = a.transpose() * b;
    let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    c.acos()
}

/// Re-orthonormalizes a nearly orthonormal matrix through its polar factor.
pub fn orthonormalize(r: &Mat3) -> Mat3 {
    Rotation3::from_matrix_eps(r, 1e-12, 64, Rotation3::identity()).into_inner()
}
