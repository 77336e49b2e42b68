//! Geometric inlier-ratio estimate for a depth observation, scored against the
//! surfels found along its scanning ray.

use nalgebra::{Point3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::extraction::Surfel;
use crate::traversal::traverse_cells;
use crate::volume_grid::{Axis, BlockCoord, BlockGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InlierConfig {
    /// Projective distance bandwidth in meters.
    pub theta: f64,
    pub gamma: f64,
    /// Maximum incidence angle in degrees.
    pub alpha_max_deg: f64,
    pub w_angle_floor: f64,
    /// Ratio used when no surfel supports the observation.
    pub rho_prior: f64,
}

impl Default for InlierConfig {
    fn default() -> Self {
        Self::for_voxel_size(0.008)
    }
}

impl InlierConfig {
    pub fn for_voxel_size(voxel_size: f64) -> Self {
        InlierConfig {
            theta: 2.0 * voxel_size,
            gamma: 0.5,
            alpha_max_deg: 80.0,
            w_angle_floor: 0.1,
            rho_prior: 0.1,
        }
    }

    fn cos_alpha_max(&self) -> f64 {
        self.alpha_max_deg.to_radians().cos()
    }
}

/// A scanning ray from the camera center with the observed range along it.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub dir: Unit<Vector3<f64>>,
    pub depth: f64,
}

impl Ray {
    /// Ray from `origin` through `point`; `None` if they coincide.
    pub fn through(origin: Point3<f64>, point: Point3<f64>) -> Option<Ray> {
        let d = point - origin;
        let depth = d.norm();
        (depth > 0.0).then(|| Ray {
            origin,
            dir: Unit::new_unchecked(d / depth),
            depth,
        })
    }

    pub fn point(&self) -> Point3<f64> {
        self.origin + self.dir.into_inner() * self.depth
    }
}

/// All surfels in voxels crossed by the ray within `±truncation` of the observed range.
pub fn collect_surfels(grid: &BlockGrid, ray: &Ray) -> Vec<Surfel> {
    let mut out = Vec::new();
    if grid.is_empty() {
        return out;
    }
    let t = grid.truncation();
    let start = ray.origin + ray.dir.into_inner() * (ray.depth - t).max(0.0);
    let end = ray.origin + ray.dir.into_inner() * (ray.depth + t);
    let mut cached: Option<(BlockCoord, Option<&crate::volume_grid::VoxelBlock>)> = None;
    traverse_cells(&start, &end, grid.voxel_size(), |g| {
        let (coord, index) = BlockCoord::split_global(g);
        let block = match cached {
            Some((c, b)) if c == coord => b,
            _ => {
                let b = grid.block(&coord);
                cached = Some((coord, b));
                b
            }
        };
        if let Some(block) = block {
            if block.surfels.is_empty() {
                return;
            }
            for axis in Axis::ALL {
                if let Some(s) = block.surfels.get(index, axis) {
                    out.push(*s);
                }
            }
        }
    });
    out
}

pub fn weight_dist(surfel: &Surfel, point: &Point3<f64>, cfg: &InlierConfig) -> f64 {
    let d = surfel.normal.dot(&(surfel.position - point));
    (-(d * d) / (2.0 * cfg.theta * cfg.theta)).exp()
}

/// Incidence weight; the angle is taken between the normal and the reversed
/// viewing direction, ignoring the normal's sign.
pub fn weight_angle(surfel: &Surfel, ray: &Ray, cfg: &InlierConfig) -> f64 {
    let cos_alpha = surfel.normal.dot(&ray.dir).abs().min(1.0);
    let cos_max = cfg.cos_alpha_max();
    // Compared in degrees with a rounding margin so alpha == alpha_max lands on the floor.
    if cos_alpha.acos().to_degrees() < cfg.alpha_max_deg - 1e-9 {
        (cos_alpha - cos_max) / (1.0 - cos_max)
    } else {
        cfg.w_angle_floor
    }
}

/// In-plane distance from the surfel center to `point`.
pub fn disk_distance(surfel: &Surfel, point: &Point3<f64>) -> f64 {
    let n = surfel.normal.into_inner();
    let d = point - surfel.position;
    (d - n * n.dot(&d)).norm()
}

/// Support of the surfel disk, decaying from 1 at its center towards `gamma`.
pub fn weight_radius(surfel: &Surfel, point: &Point3<f64>, cfg: &InlierConfig) -> f64 {
    let d_disk = disk_distance(surfel, point);
    cfg.gamma + 2.0 * (1.0 - cfg.gamma) / (1.0 + (d_disk / surfel.radius).exp())
}

pub fn surfel_score(surfel: &Surfel, ray: &Ray, cfg: &InlierConfig) -> f64 {
    let p = ray.point();
    weight_dist(surfel, &p, cfg) * weight_radius(surfel, &p, cfg) * weight_angle(surfel, ray, cfg)
}

/// Highest surfel score, never below the prior ratio.
pub fn inlier_ratio(surfels: &[Surfel], ray: &Ray, cfg: &InlierConfig) -> f64 {
    surfels
        .iter()
        .map(|s| surfel_score(s, ray, cfg))
        .fold(cfg.rho_prior, f64::max)
}
