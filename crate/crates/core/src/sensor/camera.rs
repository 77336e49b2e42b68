use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pinhole intrinsics. Pixel `(u, v)` has its center at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    /// Default intrinsics of the TUM RGB-D benchmark at 640x480.
    pub fn tum_default() -> Self {
        CameraIntrinsics {
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidFrame(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Continuous pixel coordinates of a camera-frame point, or `None` when the
    /// point is behind the camera or its nearest pixel lies outside the image.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        if !(p.z > 0.0) {
            return None;
        }
        let u = self.fx * p.x / p.z + self.cx;
        let v = self.fy * p.y / p.z + self.cy;
        let inside =
            u >= -0.5 && v >= -0.5 && u < self.width as f64 - 0.5 && v < self.height as f64 - 0.5;
        inside.then_some((u, v))
    }

    /// Nearest pixel a camera-frame point projects onto.
    pub fn pixel_of(&self, p: &Point3<f64>) -> Option<(usize, usize)> {
        let (u, v) = self.project(p)?;
        let (u, v) = ((u + 0.5).floor() as usize, (v + 0.5).floor() as usize);
        (u < self.width && v < self.height).then_some((u, v))
    }

    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Point3<f64> {
        Point3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }
}
