use serde::{Deserialize, Serialize};

/// Axial depth noise `iota(z) = k0 + k1 * (z - z0)^2`, the lateral and angular
/// terms of the Kinect error model dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub k0: f64,
    pub k1: f64,
    pub z0: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            k0: 0.0012,
            k1: 0.0019,
            z0: 0.4,
        }
    }
}

impl NoiseModel {
    /// Standard deviation of a depth reading at `z` meters.
    pub fn axial(&self, z: f64) -> f64 {
        self.k0 + self.k1 * (z - self.z0).powi(2)
    }
}
