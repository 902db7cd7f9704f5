//! Pinhole camera with a rigid camera-to-world pose.
//!
//! Convention: camera frame has +x right, +y down, +z forward (into the
//! scene). Pixel (row, col) maps to the ray through its center.

use serde::{Deserialize, Serialize};

use super::error::{Error, Result};
use super::math::{vec3, Mat3, Ray, Vec3};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Rotation block of the camera-to-world transform.
    pub rotation: Mat3,
    /// Camera center in world coordinates.
    pub origin: Vec3,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Mat3,
        origin: Vec3,
    ) -> Result<Camera> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::InvalidCamera {
                reason: format!("focal lengths must be positive, got fx={fx} fy={fy}"),
            });
        }
        let err = rotation.orthonormality_error();
        if err > 1e-6 {
            return Err(Error::InvalidCamera {
                reason: format!("pose rotation block not orthonormal (error {err:.2e})"),
            });
        }
        Ok(Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            origin,
        })
    }

    /// Camera at `eye` looking at `target`, `up` approximately up, with a
    /// square pixel grid and the given vertical field of view in radians.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        width: usize,
        height: usize,
        fov_y: f64,
    ) -> Result<Camera> {
        let forward = (target - eye).normalized();
        let right = forward.cross(up).normalized();
        let down = forward.cross(right).normalized();
        let rotation = Mat3::from_cols(right, down, forward);
        let fy = height as f64 / (2.0 * (fov_y / 2.0).tan());
        Camera::new(
            fy,
            fy,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            rotation,
            eye,
        )
    }

    /// World-space ray through the center of pixel (row, col).
    pub fn pixel_ray(&self, row: usize, col: usize) -> Ray {
        self.ray_through(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// World-space ray through image coordinates (u, v) in pixels.
    pub fn ray_through(&self, u: f64, v: f64) -> Ray {
        let dir_cam = vec3((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        let dir_world = self.rotation.mul_vec(dir_cam);
        Ray::new(self.origin, dir_world)
    }

    /// Rotate a rig-frame offset into world coordinates.
    pub fn rig_to_world(&self, rig_offset: Vec3) -> Vec3 {
        self.rotation.mul_vec(rig_offset)
    }
}
