//! Pinhole cameras: +z forward, +x right, +y down in the camera frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::{rotation_from_row_major, rotation_to_row_major, RigidTransform, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Camera frame to world.
    pub pose: RigidTransform,
}

/// JSON form of a camera; rotation is row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx.is_finite() && self.fy.is_finite()) || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Camera(format!(
                "focal lengths must be positive and finite (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Camera("image size must be nonzero".into()));
        }
        if !self.pose.is_rigid() || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::Camera("invalid extrinsics or principal point".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; `fov_y` in radians.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fov_y: f64, width: u32, height: u32) -> Result<Camera> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Camera("eye and target coincide".into()))?;
        let up = (up - z * up.dot(&z))
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Camera("up vector parallel to view direction".into()))?;
        let x = z.cross(&up);
        let y = -up;
        let rotation = nalgebra::Matrix3::from_columns(&[x, y, z]);
        let f = 0.5 * height as f64 / (0.5 * fov_y).tan();
        let cam = Camera {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
            pose: RigidTransform::new(rotation, eye),
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Ray through the center of pixel `(px, py)`: origin and unit direction.
    pub fn ray(&self, px: u32, py: u32) -> (Vec3, Vec3) {
        let d = Vec3::new(
            (px as f64 + 0.5 - self.cx) / self.fx,
            (py as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        );
        (self.pose.translation, (self.pose.rotation * d).normalize())
    }

    /// Pixel coordinates and depth of a world point in front of the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let q = self.pose.apply_inverse(p);
        if q.z <= 1e-9 {
            return None;
        }
        Some((self.fx * q.x / q.z + self.cx, self.fy * q.y / q.z + self.cy, q.z))
    }

    pub fn to_record(&self) -> CameraRecord {
        CameraRecord {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            rotation: rotation_to_row_major(&self.pose.rotation),
            translation: self.pose.translation.into(),
        }
    }

    pub fn from_record(r: &CameraRecord) -> Result<Camera> {
        let cam = Camera {
            fx: r.fx,
            fy: r.fy,
            cx: r.cx,
            cy: r.cy,
            width: r.width,
            height: r.height,
            pose: RigidTransform::new(rotation_from_row_major(&r.rotation), Vec3::from(r.translation)),
        };
        cam.validate()?;
        Ok(cam)
    }
}

/// Cameras spread on a circle around `center` at the given elevation, all looking at it.
pub fn orbit_cameras(center: Vec3, radius: f64, elevation: f64, count: usize, fov_y: f64, size: u32) -> Result<Vec<Camera>> {
    (0..count)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / count as f64;
            let eye = center
                + Vec3::new(
                    radius * elevation.cos() * a.cos(),
                    radius * elevation.sin(),
                    radius * elevation.cos() * a.sin(),
                );
            Camera::look_at(eye, center, Vec3::y(), fov_y, size, size)
        })
        .collect()
}
