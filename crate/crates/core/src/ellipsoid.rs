//! World-space bone ellipsoids and the Mahalanobis distance shared by skinning
//! and occupancy.
//!
//! For a bone with world transform `(R, t)` (bone frame to world) and semi-axes
//! `s`, a point is expressed in the bone frame as `u = Rᵀ (x - t)` and
//! `d_M = sqrt(Σ u_i² / s_i²)`, so `d_M = 1` exactly on the ellipsoid surface.

use std::ops::{AddAssign, Mul};

use crate::rig::{BoneId, Pose, Rig};
use crate::transform::{Mat3, RigidTransform, Vec3};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid {
    pub center: Vec3,
    pub rotation: Mat3,
    pub scale: Vec3,
}

/// Gradient with respect to an ellipsoid's parameters. `rotation` is the
/// gradient for a left increment `R ← exp(ω) R` evaluated at `ω = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EllipsoidGrad {
    pub center: Vec3,
    pub rotation: Vec3,
    pub scale: Vec3,
}

impl EllipsoidGrad {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_array(&self) -> [f64; 9] {
        [
            self.center.x,
            self.center.y,
            self.center.z,
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
            self.scale.x,
            self.scale.y,
            self.scale.z,
        ]
    }

    pub fn norm_squared(&self) -> f64 {
        self.center.norm_squared() + self.rotation.norm_squared() + self.scale.norm_squared()
    }
}

impl AddAssign for EllipsoidGrad {
    fn add_assign(&mut self, rhs: Self) {
        self.center += rhs.center;
        self.rotation += rhs.rotation;
        self.scale += rhs.scale;
    }
}

impl Mul<f64> for EllipsoidGrad {
    type Output = EllipsoidGrad;
    fn mul(self, k: f64) -> EllipsoidGrad {
        EllipsoidGrad {
            center: self.center * k,
            rotation: self.rotation * k,
            scale: self.scale * k,
        }
    }
}

impl Ellipsoid {
    pub fn new(center: Vec3, rotation: Mat3, scale: Vec3) -> Self {
        Self {
            center,
            rotation,
            scale,
        }
    }

    pub fn from_transform(world: &RigidTransform, scale: Vec3) -> Self {
        Self::new(world.translation, world.rotation, scale)
    }

    pub fn transform(&self) -> RigidTransform {
        RigidTransform::new(self.rotation, self.center)
    }

    /// Point in the bone frame.
    #[inline]
    pub fn local(&self, x: &Vec3) -> Vec3 {
        self.rotation.tr_mul(&(x - self.center))
    }

    #[inline]
    pub fn mahalanobis(&self, x: &Vec3) -> f64 {
        let u = self.local(x);
        let a = u.x / self.scale.x;
        let b = u.y / self.scale.y;
        let c = u.z / self.scale.z;
        (a * a + b * b + c * c).sqrt()
    }

    /// Distance and its gradient with respect to the ellipsoid parameters.
    /// The gradient is zero at the center, where the distance is not differentiable.
    pub fn mahalanobis_grad(&self, x: &Vec3) -> (f64, EllipsoidGrad) {
        let r = x - self.center;
        let u = self.rotation.tr_mul(&r);
        let inv2 = self.scale.map(|s| 1.0 / (s * s));
        let du = u.component_mul(&inv2);
        let d = u.dot(&du).sqrt();
        if d == 0.0 {
            return (0.0, EllipsoidGrad::zero());
        }
        let rdu = self.rotation * du;
        let grad = EllipsoidGrad {
            center: -rdu / d,
            rotation: rdu.cross(&r) / d,
            scale: Vec3::new(
                -u.x * u.x / (self.scale.x * self.scale.x * self.scale.x * d),
                -u.y * u.y / (self.scale.y * self.scale.y * self.scale.y * d),
                -u.z * u.z / (self.scale.z * self.scale.z * self.scale.z * d),
            ),
        };
        (d, grad)
    }

    /// Returns a copy moved along a parameter increment (rotation by left exponential).
    pub fn stepped(&self, delta: &EllipsoidGrad) -> Ellipsoid {
        Ellipsoid {
            center: self.center + delta.center,
            rotation: crate::transform::exp_so3(&delta.rotation) * self.rotation,
            scale: self.scale + delta.scale,
        }
    }

    /// Radius of the smallest sphere around the center containing the `d_M = k` surface.
    pub fn bounding_radius(&self, k: f64) -> f64 {
        self.scale.max() * k
    }
}

/// Mahalanobis distance from `x` to a bone with world transform `bone_world` and semi-axes `scale`.
pub fn mahalanobis(x: &Vec3, bone_world: &RigidTransform, scale: &Vec3) -> f64 {
    Ellipsoid::from_transform(bone_world, *scale).mahalanobis(x)
}

/// World ellipsoids of the leaf bones under `pose`, in leaf order.
pub fn leaf_ellipsoids(rig: &Rig, pose: &Pose) -> Result<Vec<(BoneId, Ellipsoid)>> {
    let world = rig.compose_world(pose)?;
    Ok(rig
        .leaf_bones()
        .into_iter()
        .map(|id| (id, Ellipsoid::from_transform(&world[&id], rig.bones[&id].scale)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::exp_so3;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn center_and_unit_sphere() {
        let e = Ellipsoid::new(Vec3::new(1.0, 2.0, 3.0), Mat3::identity(), Vec3::new(1.0, 1.0, 1.0));
        assert_eq!(e.mahalanobis(&Vec3::new(1.0, 2.0, 3.0)), 0.0);
        assert_eq!(e.mahalanobis(&Vec3::new(3.0, 2.0, 3.0)), 2.0);
    }

    #[test]
    fn rotated_ellipsoid_against_dense_formula() {
        let r = exp_so3(&Vec3::new(0.0, 0.0, FRAC_PI_2));
        let e = Ellipsoid::new(Vec3::zeros(), r, Vec3::new(2.0, 1.0, 1.0));
        let x = Vec3::new(0.0, 2.0, 0.0);
        // Dense oracle: sqrt(rᵀ R S Rᵀ r).
        let s = Mat3::from_diagonal(&Vec3::new(0.25, 1.0, 1.0));
        let oracle = (x.transpose() * r * s * r.transpose() * x)[(0, 0)].sqrt();
        assert!((e.mahalanobis(&x) - oracle).abs() < 1e-15);
        assert!((e.mahalanobis(&x) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let e = Ellipsoid::new(
            Vec3::new(0.2, -0.1, 0.3),
            exp_so3(&Vec3::new(0.4, -0.7, 0.2)),
            Vec3::new(0.8, 0.5, 1.3),
        );
        let x = Vec3::new(1.0, 0.4, -0.6);
        let (_, g) = e.mahalanobis_grad(&x);
        let g = g.to_array();
        let h = 1e-6;
        for k in 0..9 {
            let mut dp = [0.0; 9];
            dp[k] = h;
            let step = |sign: f64| {
                let d = EllipsoidGrad {
                    center: Vec3::new(dp[0], dp[1], dp[2]) * sign,
                    rotation: Vec3::new(dp[3], dp[4], dp[5]) * sign,
                    scale: Vec3::new(dp[6], dp[7], dp[8]) * sign,
                };
                e.stepped(&d).mahalanobis(&x)
            };
            let fd = (step(1.0) - step(-1.0)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8, "param {k}: fd {fd} vs {}", g[k]);
        }
    }
}
