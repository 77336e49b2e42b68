//! Depth frames, camera model, sensor noise, dataset loading and synthetic rendering.

mod camera;
mod noise;
pub mod synthetic;
pub mod tum;

pub use camera::CameraIntrinsics;
pub use noise::NoiseModel;

use nalgebra::{Isometry3, Point3};

use crate::{Error, Result};

/// A depth image in meters (0 = invalid) with its camera and world-from-camera pose.
#[derive(Debug, Clone)]
pub struct DepthFrame {
    pub depth: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
    /// World-from-camera: `p_world = pose * p_cam`.
    pub pose: Isometry3<f64>,
    pub timestamp: f64,
}

impl DepthFrame {
    pub fn new(
        depth: Vec<f64>,
        intrinsics: CameraIntrinsics,
        pose: Isometry3<f64>,
        timestamp: f64,
    ) -> Result<Self> {
        let frame = DepthFrame {
            depth,
            intrinsics,
            pose,
            timestamp,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let expected = self.intrinsics.width * self.intrinsics.height;
        if self.depth.len() != expected {
            return Err(Error::InvalidFrame(format!(
                "depth has {} pixels, intrinsics expect {expected}",
                self.depth.len()
            )));
        }
        self.validate_pose()?;
        if !self.timestamp.is_finite() {
            return Err(Error::InvalidFrame("non-finite timestamp".into()));
        }
        Ok(())
    }

    pub fn validate_pose(&self) -> Result<()> {
        let t = &self.pose.translation.vector;
        let q = self.pose.rotation.quaternion();
        if !(t.iter().all(|v| v.is_finite()) && q.coords.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidFrame("non-finite pose".into()));
        }
        let r = self.pose.rotation.to_rotation_matrix();
        let err = (r.matrix().transpose() * r.matrix() - nalgebra::Matrix3::identity())
            .abs()
            .max();
        if err > 1e-6 {
            return Err(Error::InvalidFrame(format!(
                "pose rotation not orthonormal (error {err:e})"
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Depth at pixel `(u, v)`; `None` when the pixel is invalid.
    pub fn depth_at(&self, u: usize, v: usize) -> Option<f64> {
        let z = self.depth[v * self.intrinsics.width + u];
        (z > 0.0 && z.is_finite()).then_some(z)
    }

    pub fn camera_center(&self) -> Point3<f64> {
        Point3::from(self.pose.translation.vector)
    }

    /// World-space 3D point observed at pixel `(u, v)`.
    pub fn observed_point(&self, u: usize, v: usize) -> Option<Point3<f64>> {
        let z = self.depth_at(u, v)?;
        Some(self.pose * self.intrinsics.unproject(u as f64, v as f64, z))
    }

    pub fn valid_pixels(&self) -> usize {
        self.depth
            .iter()
            .filter(|z| **z > 0.0 && z.is_finite())
            .count()
    }
}
