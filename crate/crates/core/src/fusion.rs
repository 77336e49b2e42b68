//! Projective SDF observations and the per-voxel PSDF / TSDF updates.
//!
//! The PSDF update is the moment-matched Bayesian step for the mixture
//! likelihood `rho * N(d; D, tau^2) + (1 - rho) * U(d; -band, band)` under a
//! `Beta(a, b) * N(mu, sigma^2)` prior, where `rho` is the geometric inlier
//! estimate of [`crate::inlier`] standing in for `a / (a + b)`.

use std::f64::consts::PI;

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::inlier::{collect_surfels, inlier_ratio, InlierConfig, Ray};
use crate::sensor::{DepthFrame, NoiseModel};
use crate::volume_grid::{BlockCoord, BlockGrid, PsdfVoxel, VOXELS_PER_BLOCK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    #[default]
    Psdf,
    Tsdf,
}

impl std::str::FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "psdf" => Ok(FusionMode::Psdf),
            "tsdf" => Ok(FusionMode::Tsdf),
            other => Err(format!(
                "unknown fusion mode '{other}' (expected psdf or tsdf)"
            )),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Psdf => "psdf",
            FusionMode::Tsdf => "tsdf",
        })
    }
}

/// Per-observation truncation band `scale * (voxel_size + tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationRule {
    pub scale: f64,
    pub voxel_size: f64,
}

impl TruncationRule {
    pub fn band(&self, tau: f64) -> f64 {
        self.scale * (self.voxel_size + tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NumericFloors {
    pub sigma_min: f64,
    pub count_min: f64,
    pub count_max: f64,
}

impl Default for NumericFloors {
    fn default() -> Self {
        NumericFloors {
            sigma_min: 1e-4,
            count_min: 0.5,
            count_max: 1e4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub truncation: TruncationRule,
    pub noise: NoiseModel,
    pub inlier: InlierConfig,
    pub floors: NumericFloors,
    pub mode: FusionMode,
}

impl FusionConfig {
    pub fn for_voxel_size(voxel_size: f64) -> Self {
        FusionConfig {
            truncation: TruncationRule {
                scale: 3.0,
                voxel_size,
            },
            noise: NoiseModel::default(),
            inlier: InlierConfig::for_voxel_size(voxel_size),
            floors: NumericFloors::default(),
            mode: FusionMode::Psdf,
        }
    }
}

/// One signed distance sample `d_obs` with std `tau`, valid within `±band`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfObservation {
    pub d_obs: f64,
    pub tau: f64,
    pub rho: f64,
    pub band: f64,
}

/// An observation together with the pixel it was read from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelObservation {
    pub obs: SdfObservation,
    pub pixel: (usize, usize),
}

/// Projective SDF of a voxel corner: the depth read at the pixel the corner
/// projects onto, minus the corner's own depth. Observations outside the
/// truncation band are dropped. `rho` is initialized to the prior ratio.
pub fn sdf_observation(
    corner: &Point3<f64>,
    frame: &DepthFrame,
    cfg: &FusionConfig,
) -> Option<PixelObservation> {
    let p_cam = frame.pose.inverse_transform_point(corner);
    observation_from_camera_point(&p_cam, frame, cfg)
}

fn observation_from_camera_point(
    p_cam: &Point3<f64>,
    frame: &DepthFrame,
    cfg: &FusionConfig,
) -> Option<PixelObservation> {
    let pixel = frame.intrinsics.pixel_of(p_cam)?;
    let z = frame.depth_at(pixel.0, pixel.1)?;
    let d_obs = z - p_cam.z;
    let tau = cfg.noise.axial(z);
    let band = cfg.truncation.band(tau);
    (d_obs.abs() <= band).then_some(PixelObservation {
        obs: SdfObservation {
            d_obs,
            tau,
            rho: cfg.inlier.rho_prior,
            band,
        },
        pixel,
    })
}

/// Intermediate quantities of one PSDF step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateTerms {
    pub c1: f64,
    pub c2: f64,
    pub m: f64,
    pub s2: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl UpdateTerms {
    /// `(C1, C2) / (C1 + C2)`, summing to exactly one. `None` when both vanish.
    pub fn normalized(&self) -> Option<(f64, f64)> {
        let total = self.c1 + self.c2;
        if !(total > 0.0 && total.is_finite()) {
            return None;
        }
        let w1 = self.c1 / total;
        Some((w1, 1.0 - w1))
    }
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-(d * d) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

pub fn update_terms(v: &PsdfVoxel, obs: &SdfObservation) -> UpdateTerms {
    let var = v.sigma * v.sigma;
    let tau2 = obs.tau * obs.tau;
    let s2 = 1.0 / (1.0 / var + 1.0 / tau2);
    let m = s2 * (v.mu / var + obs.d_obs / tau2);
    let (d_min, d_max) = (-obs.band, obs.band);
    let c1 = obs.rho * normal_pdf(obs.d_obs, v.mu, var + tau2);
    let c2 = (1.0 - obs.rho) / (d_max - d_min);
    UpdateTerms {
        c1,
        c2,
        m,
        s2,
        d_min,
        d_max,
    }
}

/// One moment-matched PSDF step. Baseline TSDF fields are left untouched.
pub fn psdf_update(v: &PsdfVoxel, obs: &SdfObservation, floors: &NumericFloors) -> PsdfVoxel {
    let mut prior = *v;
    prior.sigma = prior.sigma.max(floors.sigma_min);
    let terms = update_terms(&prior, obs);
    let Some((w1, w2)) = terms.normalized() else {
        return *v;
    };

    let mu = w1 * terms.m + w2 * prior.mu;
    // Second moment about the new mean; equal to E[D^2] - mu^2 without the cancellation.
    let var = w1 * (terms.s2 + (terms.m - mu).powi(2))
        + w2 * (prior.sigma.powi(2) + (prior.mu - mu).powi(2));

    let (a, b) = (prior.a, prior.b);
    let n1 = a + b + 1.0;
    let n2 = n1 * (a + b + 2.0);
    let e1 = w1 * (a + 1.0) / n1 + w2 * a / n1;
    let e2 = w1 * (a + 1.0) * (a + 2.0) / n2 + w2 * a * (a + 1.0) / n2;
    let spread = e2 - e1 * e1;
    let (a_n, b_n) = if spread > 0.0 && e1 > 0.0 && e1 < 1.0 {
        let a_n = e1 * (e1 - e2) / spread;
        (a_n, a_n * (1.0 - e1) / e1)
    } else {
        (a, b)
    };
    let (a_n, b_n) = clamp_counts(a_n, b_n, floors);

    PsdfVoxel {
        a: a_n,
        b: b_n,
        mu,
        sigma: var.sqrt().max(floors.sigma_min),
        ..*v
    }
}

/// Rescales `(a, b)` into `[count_min, count_max]`, keeping `a / (a + b)` when possible.
fn clamp_counts(a: f64, b: f64, floors: &NumericFloors) -> (f64, f64) {
    let (mut a, mut b) = (a, b);
    let hi = a.max(b);
    if hi > floors.count_max {
        let k = floors.count_max / hi;
        a *= k;
        b *= k;
    }
    let lo = a.min(b);
    if lo < floors.count_min {
        let k = floors.count_min / lo;
        a *= k;
        b *= k;
    }
    (
        a.clamp(floors.count_min, floors.count_max),
        b.clamp(floors.count_min, floors.count_max),
    )
}

pub const TSDF_MAX_WEIGHT: f64 = 255.0;

/// Unit-weight running average of the SDF, weight capped at 255.
pub fn tsdf_update(v: &PsdfVoxel, obs: &SdfObservation) -> PsdfVoxel {
    let w = v.tsdf_weight;
    PsdfVoxel {
        tsdf_value: (w * v.tsdf_value + obs.d_obs) / (w + 1.0),
        tsdf_weight: (w + 1.0).min(TSDF_MAX_WEIGHT),
        ..*v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FusionStats {
    pub voxels_updated: usize,
    /// Mean inlier ratio over updated voxels; `None` in TSDF mode or when nothing was updated.
    pub mean_rho: Option<f64>,
}

/// Inlier ratio per pixel (row-major, `NaN` on invalid pixels), scored
/// against the surfels currently stored in the grid.
pub fn rho_map(grid: &BlockGrid, frame: &DepthFrame, cfg: &InlierConfig) -> Vec<f64> {
    let (w, h) = (frame.width(), frame.height());
    let origin = frame.camera_center();
    (0..w * h)
        .into_par_iter()
        .map(|i| {
            let Some(p) = frame.observed_point(i % w, i / w) else {
                return f64::NAN;
            };
            match Ray::through(origin, p) {
                Some(ray) => inlier_ratio(&collect_surfels(grid, &ray), &ray, cfg),
                None => cfg.rho_prior,
            }
        })
        .collect()
}

/// Conservative test for whether a sphere (camera frame) can hold a voxel
/// that receives an observation: inside the pixel frustum and not beyond
/// the deepest reading plus its band.
struct FrustumCull {
    planes: [nalgebra::Vector3<f64>; 4],
    far: f64,
}

impl FrustumCull {
    fn new(frame: &DepthFrame, cfg: &FusionConfig) -> Self {
        let k = &frame.intrinsics;
        let x0 = (-0.5 - k.cx) / k.fx;
        let x1 = (k.width as f64 - 0.5 - k.cx) / k.fx;
        let y0 = (-0.5 - k.cy) / k.fy;
        let y1 = (k.height as f64 - 0.5 - k.cy) / k.fy;
        let n = |x: f64, y: f64, z: f64| nalgebra::Vector3::new(x, y, z).normalize();
        let zmax = frame
            .depth
            .iter()
            .filter(|z| **z > 0.0 && z.is_finite())
            .fold(0.0f64, |m, z| m.max(*z));
        FrustumCull {
            planes: [
                n(1.0, 0.0, -x0),
                n(-1.0, 0.0, x1),
                n(0.0, 1.0, -y0),
                n(0.0, -1.0, y1),
            ],
            far: zmax
                + cfg
                    .truncation
                    .band(cfg.noise.axial(zmax).max(cfg.noise.axial(0.0))),
        }
    }

    fn may_touch(&self, center: &Point3<f64>, radius: f64) -> bool {
        center.z > -radius
            && center.z - radius <= self.far
            && self.planes.iter().all(|n| n.dot(&center.coords) >= -radius)
    }
}

/// Fuses one frame into every allocated voxel that receives an observation.
///
/// In PSDF mode the inlier ratio of each observation comes from the surfels
/// left in the grid by the previous extraction, and both the PSDF and TSDF
/// fields are updated. TSDF mode updates only the baseline fields.
pub fn fuse_frame(grid: &mut BlockGrid, frame: &DepthFrame, cfg: &FusionConfig) -> FusionStats {
    let psdf = cfg.mode == FusionMode::Psdf;
    let rho = if psdf {
        rho_map(grid, frame, &cfg.inlier)
    } else {
        Vec::new()
    };
    let width = frame.width();
    let voxel_size = grid.voxel_size();
    let block_side = grid.block_side();
    let block_radius = block_side * 3f64.sqrt() * 0.5;
    let cam_from_world = frame.pose.inverse();
    let cull = FrustumCull::new(frame, cfg);

    let mut per_block: Vec<(BlockCoord, usize, f64)> = grid
        .blocks_map_mut()
        .par_iter_mut()
        .filter_map(|(coord, block)| {
            let origin = coord.global_voxel(0);
            let center = Point3::new(
                (coord.x as f64 + 0.5) * block_side,
                (coord.y as f64 + 0.5) * block_side,
                (coord.z as f64 + 0.5) * block_side,
            );
            if !cull.may_touch(&(cam_from_world * center), block_radius) {
                return None;
            }
            let mut count = 0;
            let mut rho_sum = 0.0;
            for (index, voxel) in block.voxels.iter_mut().enumerate().take(VOXELS_PER_BLOCK) {
                let [lx, ly, lz] = crate::volume_grid::voxel_local(index);
                let corner = Point3::new(
                    (origin[0] + lx as i64) as f64 * voxel_size,
                    (origin[1] + ly as i64) as f64 * voxel_size,
                    (origin[2] + lz as i64) as f64 * voxel_size,
                );
                let Some(mut po) =
                    observation_from_camera_point(&(cam_from_world * corner), frame, cfg)
                else {
                    continue;
                };
                if psdf {
                    po.obs.rho = rho[po.pixel.1 * width + po.pixel.0];
                    rho_sum += po.obs.rho;
                    *voxel = psdf_update(voxel, &po.obs, &cfg.floors);
                }
                *voxel = tsdf_update(voxel, &po.obs);
                count += 1;
            }
            (count > 0).then_some((*coord, count, rho_sum))
        })
        .collect();

    per_block.sort_unstable_by_key(|(c, _, _)| *c);
    for (c, _, _) in &per_block {
        grid.mark_dirty(*c);
    }
    let voxels_updated = per_block.iter().map(|(_, n, _)| n).sum();
    let rho_total: f64 = per_block.iter().map(|(_, _, r)| r).sum();
    FusionStats {
        voxels_updated,
        mean_rho: (psdf && voxels_updated > 0).then(|| rho_total / voxels_updated as f64),
    }
}
