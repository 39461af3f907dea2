//! Pinhole cameras. Camera space is x right, y down, z forward; pixel
//! `(i, j)` has its center at `(i + 0.5, j + 0.5)`.

use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraJson", into = "CameraJson")]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_cam: Matrix4<f64>,
    pub near: f64,
}

#[derive(Serialize, Deserialize)]
struct CameraJson {
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    world_to_cam: [[f64; 4]; 4],
    near: f64,
}

impl TryFrom<CameraJson> for Camera {
    type Error = Error;

    fn try_from(j: CameraJson) -> Result<Self> {
        let m = Matrix4::from_fn(|r, c| j.world_to_cam[r][c]);
        let cam = Camera {
            width: j.width,
            height: j.height,
            fx: j.fx,
            fy: j.fy,
            cx: j.cx,
            cy: j.cy,
            world_to_cam: m,
            near: j.near,
        };
        cam.validate()?;
        Ok(cam)
    }
}

impl From<Camera> for CameraJson {
    fn from(c: Camera) -> Self {
        let mut rows = [[0.0; 4]; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            for (col, v) in row.iter_mut().enumerate() {
                *v = c.world_to_cam[(r, col)];
            }
        }
        CameraJson {
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            world_to_cam: rows,
            near: c.near,
        }
    }
}

impl Camera {
    /// Camera at `eye` looking at `target`; `up` is the world direction that
    /// should appear at the top of the image.
    pub fn look_at(
        width: usize,
        height: usize,
        focal: f64,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::InvalidCamera("up is parallel to the view direction".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(rot * eye);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        let cam = Camera {
            width,
            height,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            world_to_cam: m,
            near: 0.01,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera("focal lengths must be positive".into()));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::InvalidCamera("image must be at least 16x16".into()));
        }
        if !(self.near > 0.0) {
            return Err(Error::InvalidCamera("near must be positive".into()));
        }
        if !self.world_to_cam.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite transform".into()));
        }
        let r = self.rotation();
        if (r * r.transpose() - Matrix3::identity()).amax() > 1e-6 {
            return Err(Error::InvalidCamera("rotation block is not orthonormal".into()));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_cam.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_cam.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    /// Camera center in world coordinates.
    pub fn eye(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cam: Camera = serde_json::from_str(&text)?;
        Ok(cam)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Loads either a single camera object or an array of cameras.
pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.is_array() {
        Ok(serde_json::from_value(value)?)
    } else {
        Ok(vec![serde_json::from_value(value)?])
    }
}
