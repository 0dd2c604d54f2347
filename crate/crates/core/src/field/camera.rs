use super::geom::{self, Vec3};
use crate::error::{Error, Result};

/// A ray through a pixel center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3, near: f64, far: f64) -> Result<Self> {
        if (geom::norm(dir) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("ray direction must be unit length"));
        }
        if !(0.0 <= near && near < far) {
            return Err(Error::invalid(format!("need 0 <= near < far, got {near}, {far}")));
        }
        Ok(Self { origin, dir, near, far })
    }
}

/// Pinhole camera. `rotation` maps camera axes to world axes (columns are
/// right, up, backward); the camera looks along its local `-z`.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fov_y: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn new(
        width: usize,
        height: usize,
        fov_y: f64,
        rotation: [[f64; 3]; 3],
        translation: Vec3,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let cam = Self {
            width,
            height,
            fov_y,
            rotation,
            translation,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target` with world `+z` as the up hint.
    pub fn look_at(width: usize, height: usize, fov_y: f64, eye: Vec3, target: Vec3, near: f64, far: f64) -> Result<Self> {
        let back = geom::normalize(geom::sub(eye, target));
        let hint = if back[2].abs() > 0.999 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
        let right = geom::normalize(geom::cross(hint, back));
        let up = geom::cross(back, right);
        let rotation = [
            [right[0], up[0], back[0]],
            [right[1], up[1], back[1]],
            [right[2], up[2], back[2]],
        ];
        Self::new(width, height, fov_y, rotation, eye, near, far)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera needs a positive resolution"));
        }
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(Error::invalid(format!("fov {} outside (0, pi)", self.fov_y)));
        }
        if !(0.0 <= self.near && self.near < self.far) {
            return Err(Error::invalid("camera needs 0 <= near < far"));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let rtr: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let id = if i == j { 1.0 } else { 0.0 };
                if (rtr - id).abs() >= 1e-9 {
                    return Err(Error::invalid("camera rotation is not orthonormal"));
                }
            }
        }
        Ok(())
    }

    pub fn focal(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.fov_y).tan()
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Pixel `(u, v)` = (column, row), row 0 at the top.
    pub fn ray(&self, u: usize, v: usize) -> Ray {
        let f = self.focal();
        let x = (u as f64 + 0.5 - 0.5 * self.width as f64) / f;
        let y = -(v as f64 + 0.5 - 0.5 * self.height as f64) / f;
        let local = [x, y, -1.0];
        let r = &self.rotation;
        let world = [
            r[0][0] * local[0] + r[0][1] * local[1] + r[0][2] * local[2],
            r[1][0] * local[0] + r[1][1] * local[1] + r[1][2] * local[2],
            r[2][0] * local[0] + r[2][1] * local[1] + r[2][2] * local[2],
        ];
        Ray {
            origin: self.translation,
            dir: geom::normalize(world),
            near: self.near,
            far: self.far,
        }
    }

    pub fn forward(&self) -> Vec3 {
        let r = &self.rotation;
        [-r[0][2], -r[1][2], -r[2][2]]
    }

    /// Rays in row-major pixel order.
    pub fn generate_rays(&self) -> Vec<Ray> {
        (0..self.height)
            .flat_map(|v| (0..self.width).map(move |u| (u, v)))
            .map(|(u, v)| self.ray(u, v))
            .collect()
    }

    /// Row-major `[R | t]`, the pose-file layout.
    pub fn pose_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = self.translation;
        [
            r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2],
        ]
    }

    pub fn with_pose(&self, pose: &[f64; 12]) -> Result<Self> {
        let rotation = [
            [pose[0], pose[1], pose[2]],
            [pose[4], pose[5], pose[6]],
            [pose[8], pose[9], pose[10]],
        ];
        Self::new(
            self.width,
            self.height,
            self.fov_y,
            rotation,
            [pose[3], pose[7], pose[11]],
            self.near,
            self.far,
        )
    }
}
