use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Pinhole camera. `fov_deg` is the vertical field of view; pixel `(x, y)`
/// has its center at `(x + 0.5, y + 0.5)` with `y` growing downwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub fov_deg: f64,
    pub resolution: (usize, usize),
}

impl CameraPose {
    /// Camera at `position` aimed at `look_at` with world `+y` as up, or `-z`
    /// when looking (almost) straight up or down.
    pub fn looking_at(position: Vec3, look_at: Vec3, fov_deg: f64, resolution: (usize, usize)) -> Self {
        let dir = (look_at - position).normalized();
        let up = if dir.dot(Vec3::Y).abs() > 0.999 {
            Vec3::new(0.0, 0.0, -1.0)
        } else {
            Vec3::Y
        };
        CameraPose {
            position,
            look_at,
            up,
            fov_deg,
            resolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.look_at - self.position;
        if !(d.norm() > 0.0) {
            return Err(Error::InvalidArgument("camera position equals look_at".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::InvalidArgument(format!("fov {} outside (0,180)", self.fov_deg)));
        }
        if d.normalized().cross(self.up.normalized()).norm() < 1e-9 {
            return Err(Error::InvalidArgument(
                "camera up is parallel to the view direction".into(),
            ));
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(Error::InvalidArgument("camera resolution must be positive".into()));
        }
        Ok(())
    }

    /// Orthonormal `(right, up, forward)` frame.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = (self.look_at - self.position).normalized();
        let right = forward.cross(self.up).normalized();
        let up = right.cross(forward);
        (right, up, forward)
    }

    pub fn aspect(&self) -> f64 {
        self.resolution.0 as f64 / self.resolution.1 as f64
    }

    /// `1 / tan(fov / 2)`.
    pub fn focal(&self) -> f64 {
        1.0 / (self.fov_deg.to_radians() * 0.5).tan()
    }

    /// World point to camera frame (`x` right, `y` up, `z` forward).
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let (r, u, f) = self.basis();
        let d = p - self.position;
        Vec3::new(d.dot(r), d.dot(u), d.dot(f))
    }

    /// Camera-frame point to continuous pixel coordinates.
    pub fn camera_to_pixel(&self, c: Vec3) -> (f64, f64) {
        let f = self.focal();
        let (w, h) = (self.resolution.0 as f64, self.resolution.1 as f64);
        let nx = f * c.x / (c.z * self.aspect());
        let ny = f * c.y / c.z;
        ((nx + 1.0) * 0.5 * w, (1.0 - ny) * 0.5 * h)
    }

    /// Pixel coordinates and depth of a world point in front of the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let c = self.to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        let (x, y) = self.camera_to_pixel(c);
        Some((x, y, c.z))
    }

    pub fn in_frustum(&self, p: Vec3) -> bool {
        match self.project(p) {
            Some((x, y, _)) => x >= 0.0 && y >= 0.0 && x <= self.resolution.0 as f64 && y <= self.resolution.1 as f64,
            None => false,
        }
    }

    /// Unit world-space ray direction through continuous pixel `(px, py)`.
    pub fn pixel_ray(&self, px: f64, py: f64) -> Vec3 {
        let (r, u, f) = self.basis();
        let fl = self.focal();
        let nx = 2.0 * px / self.resolution.0 as f64 - 1.0;
        let ny = 1.0 - 2.0 * py / self.resolution.1 as f64;
        (f + r * (nx * self.aspect() / fl) + u * (ny / fl)).normalized()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_projects_to_image_center() {
        let cam = CameraPose::looking_at(Vec3::new(3.0, 2.0, 5.0), Vec3::new(0.5, 0.1, -1.0), 60.0, (64, 48));
        cam.validate().unwrap();
        let (x, y, d) = cam.project(cam.look_at).unwrap();
        assert!((x - 32.0).abs() < 1e-9 && (y - 24.0).abs() < 1e-9);
        assert!((d - cam.position.distance(cam.look_at)).abs() < 1e-9);
    }

    #[test]
    fn pixel_ray_inverts_projection() {
        let cam = CameraPose::looking_at(Vec3::new(0.0, 5.0, 10.0), Vec3::ZERO, 45.0, (40, 30));
        let p = Vec3::new(0.7, -0.3, 1.1);
        let (x, y, _) = cam.project(p).unwrap();
        let ray = cam.pixel_ray(x, y);
        let to_p = (p - cam.position).normalized();
        assert!(ray.distance(to_p) < 1e-9);
    }

    #[test]
    fn vertical_views_get_a_valid_up() {
        let cam = CameraPose::looking_at(Vec3::new(0.0, 10.0, 0.0), Vec3::ZERO, 60.0, (8, 8));
        cam.validate().unwrap();
    }

    #[test]
    fn invalid_cameras() {
        let mut cam = CameraPose::looking_at(Vec3::Z, Vec3::ZERO, 60.0, (8, 8));
        cam.fov_deg = 180.0;
        assert!(cam.validate().is_err());
        let cam = CameraPose::looking_at(Vec3::ZERO, Vec3::ZERO, 60.0, (8, 8));
        assert!(cam.validate().is_err());
    }
}
