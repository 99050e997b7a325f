use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pinhole camera. Camera space looks down +z with x right and y down in the
/// image; `cam_to_world` is a rigid transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub cam_to_world: Matrix4<f64>,
}

/// One ray: origin, unit direction, and the pixel it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub dir: Vector3<f64>,
    pub pixel: (usize, usize),
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidConfig("camera focal lengths must be positive".into()));
        }
        let r = self.rotation();
        let err = (r * r.transpose() - Matrix3::identity()).norm();
        if err > 1e-6 {
            return Err(Error::InvalidConfig(format!(
                "camera rotation not orthonormal (error {})",
                err
            )));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.cam_to_world.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn position(&self) -> Point3<f64> {
        Point3::new(
            self.cam_to_world[(0, 3)],
            self.cam_to_world[(1, 3)],
            self.cam_to_world[(2, 3)],
        )
    }

    /// A camera at `eye` looking at `target` with the given world up vector.
    pub fn look_at(
        width: usize,
        height: usize,
        fov_y_deg: f64,
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
    ) -> Self {
        let fwd = (target - eye).normalize();
        let right = fwd.cross(&up).normalize();
        let down = fwd.cross(&right).normalize();
        let mut m = Matrix4::identity();
        for i in 0..3 {
            m[(i, 0)] = right[i];
            m[(i, 1)] = down[i];
            m[(i, 2)] = fwd[i];
            m[(i, 3)] = eye[i];
        }
        let fy = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        Camera {
            width,
            height,
            fx: fy,
            fy,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            cam_to_world: m,
        }
    }

    /// Ray through the center of pixel (x, y).
    pub fn pixel_ray(&self, x: usize, y: usize) -> Ray {
        let px = x as f64 + 0.5;
        let py = y as f64 + 0.5;
        let d_cam = Vector3::new((px - self.cx) / self.fx, (py - self.cy) / self.fy, 1.0);
        let dir = (self.rotation() * d_cam).normalize();
        Ray {
            origin: self.position(),
            dir,
            pixel: (x, y),
        }
    }

    /// Project a world point to pixel coordinates; `None` behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        let r = self.rotation();
        let local = r.transpose() * (p - self.position());
        if local.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * local.x / local.z + self.cx,
            self.fy * local.y / local.z + self.cy,
        ))
    }
}

/// Rays for an explicit pixel list.
pub fn generate_rays(camera: &Camera, pixels: &[(usize, usize)]) -> Vec<Ray> {
    pixels.iter().map(|&(x, y)| camera.pixel_ray(x, y)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraJson {
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    /// Row-major 4x4 camera-to-world transform.
    cam_to_world: Vec<f64>,
}

impl Camera {
    pub fn to_json_value(&self) -> serde_json::Value {
        let m: Vec<f64> = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .map(|(i, j)| self.cam_to_world[(i, j)])
            .collect();
        serde_json::to_value(CameraJson {
            width: self.width,
            height: self.height,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            cam_to_world: m,
        })
        .expect("camera serializes")
    }

    pub fn from_json_value(v: &serde_json::Value) -> Result<Self> {
        let j: CameraJson = serde_json::from_value(v.clone())?;
        if j.cam_to_world.len() != 16 {
            return Err(Error::InvalidConfig("camera transform must have 16 entries".into()));
        }
        let mut m = Matrix4::zeros();
        for i in 0..4 {
            for jj in 0..4 {
                m[(i, jj)] = j.cam_to_world[i * 4 + jj];
            }
        }
        let cam = Camera {
            width: j.width,
            height: j.height,
            fx: j.fx,
            fy: j.fy,
            cx: j.cx,
            cy: j.cy,
            cam_to_world: m,
        };
        cam.validate()?;
        Ok(cam)
    }
}

pub fn save_cameras(cameras: &[Camera], path: &std::path::Path) -> Result<()> {
    let v: Vec<_> = cameras.iter().map(|c| c.to_json_value()).collect();
    std::fs::write(path, serde_json::to_string_pretty(&v)?)?;
    Ok(())
}

pub fn load_cameras(path: &std::path::Path) -> Result<Vec<Camera>> {
    let s = std::fs::read_to_string(path)?;
    let v: Vec<serde_json::Value> = serde_json::from_str(&s)?;
    v.iter().map(Camera::from_json_value).collect()
}
