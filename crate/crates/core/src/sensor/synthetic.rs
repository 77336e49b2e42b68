//! Analytic scenes rendered into depth frames with controllable noise.

use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CameraIntrinsics, DepthFrame, NoiseModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    /// Half-space whose solid side lies opposite the normal.
    Plane {
        point: Point3<f64>,
        normal: Vector3<f64>,
    },
    Sphere {
        center: Point3<f64>,
        radius: f64,
    },
    Box {
        center: Point3<f64>,
        half_extents: Vector3<f64>,
    },
}

impl Primitive {
    pub fn plane(point: Point3<f64>, normal: Vector3<f64>) -> Self {
        Primitive::Plane {
            point,
            normal: normal.normalize(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Primitive::Plane { point, normal } => {
                point.coords.iter().all(|v| v.is_finite()) && normal.norm() > 0.0
            }
            Primitive::Sphere { center, radius } => {
                center.coords.iter().all(|v| v.is_finite()) && *radius > 0.0
            }
            Primitive::Box {
                center,
                half_extents,
            } => {
                center.coords.iter().all(|v| v.is_finite()) && half_extents.iter().all(|h| *h > 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "degenerate primitive {self:?}"
            )))
        }
    }

    /// Exact signed distance, negative inside the solid.
    pub fn sdf(&self, p: &Point3<f64>) -> f64 {
        match self {
            Primitive::Plane { point, normal } => normal.normalize().dot(&(p - point)),
            Primitive::Sphere { center, radius } => (p - center).norm() - radius,
            Primitive::Box {
                center,
                half_extents,
            } => {
                let q = (p - center).abs() - half_extents;
                let outside = q.map(|v| v.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
        }
    }

    /// Smallest `t > 0` with `origin + t * dir` on the surface. `dir` need not be unit length.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        const EPS: f64 = 1e-12;
        match self {
            Primitive::Plane { point, normal } => {
                let n = normal.normalize();
                let denom = n.dot(dir);
                if denom.abs() < EPS {
                    return None;
                }
                let t = n.dot(&(point - origin)) / denom;
                (t > EPS).then_some(t)
            }
            Primitive::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.norm_squared();
                let half_b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = half_b * half_b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // Stable root pair.
                let q = -(half_b + half_b.signum() * sq);
                let (mut t0, mut t1) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                [t0, t1].into_iter().find(|t| *t > EPS)
            }
            Primitive::Box {
                center,
                half_extents,
            } => {
                let lo = center - half_extents;
                let hi = center + half_extents;
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for k in 0..3 {
                    if dir[k].abs() < EPS {
                        if origin[k] < lo[k] || origin[k] > hi[k] {
                            return None;
                        }
                        continue;
                    }
                    let (a, b) = ((lo[k] - origin[k]) / dir[k], (hi[k] - origin[k]) / dir[k]);
                    t_near = t_near.max(a.min(b));
                    t_far = t_far.min(a.max(b));
                }
                if t_near > t_far {
                    return None;
                }
                [t_near, t_far].into_iter().find(|t| *t > EPS)
            }
        }
    }
}

/// A union of analytic primitives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
}

impl Scene {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        Scene { primitives }
    }

    /// Signed distance of the union (minimum over primitives).
    pub fn sdf(&self, p: &Point3<f64>) -> f64 {
        self.primitives
            .iter()
            .map(|s| s.sdf(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Unsigned distance to the nearest primitive surface.
    pub fn surface_distance(&self, p: &Point3<f64>) -> f64 {
        self.primitives
            .iter()
            .map(|s| s.sdf(p).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// First hit parameter along the ray over all primitives.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        self.primitives
            .iter()
            .filter_map(|s| s.intersect(origin, dir))
            .min_by(f64::total_cmp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSettings {
    pub gaussian: bool,
    pub outlier_fraction: f64,
    /// Outliers are uniform in `[z - range, z + range]`.
    pub outlier_range: f64,
    pub model: NoiseModel,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        NoiseSettings::none()
    }
}

impl NoiseSettings {
    pub fn none() -> Self {
        NoiseSettings {
            gaussian: false,
            outlier_fraction: 0.0,
            outlier_range: 0.0,
            model: NoiseModel::default(),
        }
    }

    pub fn gaussian() -> Self {
        NoiseSettings {
            gaussian: true,
            ..NoiseSettings::none()
        }
    }

    pub fn with_outliers(fraction: f64, range: f64) -> Self {
        NoiseSettings {
            gaussian: true,
            outlier_fraction: fraction,
            outlier_range: range,
            model: NoiseModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err(Error::InvalidConfig(format!(
                "outlier_fraction {} outside [0, 1]",
                self.outlier_fraction
            )));
        }
        if !(self.outlier_range >= 0.0) {
            return Err(Error::InvalidConfig(
                "outlier_range must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub noisy: DepthFrame,
    pub clean: DepthFrame,
}

/// Renders the scene from `pose` (world-from-camera). Depth beyond `max_depth`
/// or rays that miss everything read 0.
pub fn render_synthetic(
    scene: &Scene,
    pose: &Isometry3<f64>,
    intrinsics: &CameraIntrinsics,
    noise: &NoiseSettings,
    max_depth: f64,
    seed: u64,
) -> Result<RenderedFrame> {
    intrinsics.validate()?;
    noise.validate()?;
    let (w, h) = (intrinsics.width, intrinsics.height);
    let origin = Point3::from(pose.translation.vector);
    let mut clean = vec![0.0; w * h];
    let mut noisy = vec![0.0; w * h];
    clean
        .par_chunks_mut(w)
        .zip(noisy.par_chunks_mut(w))
        .enumerate()
        .for_each(|(v, (clean_row, noisy_row))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(v as u64);
            for u in 0..w {
                // Direction with unit camera-z so the hit parameter is the depth.
                let dir = pose.rotation * intrinsics.unproject(u as f64, v as f64, 1.0).coords;
                let Some(z) = scene.intersect(&origin, &dir).filter(|z| *z <= max_depth) else {
                    continue;
                };
                clean_row[u] = z;
                let (pick, uni, g): (f64, f64, f64) =
                    (rng.random(), rng.random(), standard_normal(&mut rng));
                let obs = if pick < noise.outlier_fraction {
                    z + (2.0 * uni - 1.0) * noise.outlier_range
                } else if noise.gaussian {
                    z + g * noise.model.axial(z)
                } else {
                    z
                };
                noisy_row[u] = if obs > 0.0 { obs } else { 0.0 };
            }
        });
    Ok(RenderedFrame {
        noisy: DepthFrame::new(noisy, *intrinsics, *pose, 0.0)?,
        clean: DepthFrame::new(clean, *intrinsics, *pose, 0.0)?,
    })
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

/// Camera at `position` looking at `target` with `up` mapped to image-up.
pub fn look_at(
    position: Point3<f64>,
    target: Point3<f64>,
    up: Vector3<f64>,
) -> Result<Isometry3<f64>> {
    let forward = (target - position).try_normalize(1e-12).ok_or_else(|| {
        Error::InvalidConfig("camera position coincides with its look-at target".into())
    })?;
    let right = forward
        .cross(&up)
        .try_normalize(1e-12)
        .ok_or_else(|| Error::InvalidConfig("view direction parallel to up vector".into()))?;
    let down = forward.cross(&right);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[right, down, forward]));
    Ok(Isometry3::from_parts(
        Translation3::from(position.coords),
        UnitQuaternion::from_rotation_matrix(&rot),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub position: Point3<f64>,
    pub look_at: Point3<f64>,
}

/// Waypoints spread over `frames` frames; camera position and target are
/// interpolated linearly between consecutive waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Waypoint>,
    pub frames: usize,
    #[serde(default = "default_up")]
    pub up: Vector3<f64>,
}

fn default_up() -> Vector3<f64> {
    Vector3::z()
}

impl Trajectory {
    /// Circular arc about `target` at the given radius and height, azimuths in degrees.
    pub fn orbit(
        target: Point3<f64>,
        radius: f64,
        height: f64,
        azimuth_deg: (f64, f64),
        waypoints: usize,
        frames: usize,
    ) -> Self {
        let n = waypoints.max(2);
        let waypoints = (0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                let az = (azimuth_deg.0 + s * (azimuth_deg.1 - azimuth_deg.0)).to_radians();
                Waypoint {
                    position: Point3::new(
                        target.x + radius * az.cos(),
                        target.y + radius * az.sin(),
                        height,
                    ),
                    look_at: target,
                }
            })
            .collect();
        Trajectory {
            waypoints,
            frames,
            up: default_up(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::InvalidConfig("trajectory has no waypoints".into()));
        }
        if self.frames == 0 {
            return Err(Error::InvalidConfig("trajectory has zero frames".into()));
        }
        for i in 0..self.frames {
            self.pose_at(i)?;
        }
        Ok(())
    }

    pub fn pose_at(&self, frame: usize) -> Result<Isometry3<f64>> {
        let n = self.waypoints.len();
        let (a, b, s) = if n == 1 || self.frames <= 1 {
            (0, 0, 0.0)
        } else {
            let x = frame.min(self.frames - 1) as f64 / (self.frames - 1) as f64 * (n - 1) as f64;
            let i = (x.floor() as usize).min(n - 2);
            (i, i + 1, x - i as f64)
        };
        let (wa, wb) = (&self.waypoints[a], &self.waypoints[b]);
        let pos = wa.position + (wb.position - wa.position) * s;
        let tgt = wa.look_at + (wb.look_at - wa.look_at) * s;
        look_at(pos, tgt, self.up)
    }
}

fn default_max_depth() -> f64 {
    f64::INFINITY
}

/// Everything needed to render a reproducible synthetic depth sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSequence {
    pub scene: Scene,
    pub trajectory: Trajectory,
    pub intrinsics: CameraIntrinsics,
    #[serde(default)]
    pub noise: NoiseSettings,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_depth", with = "max_depth_serde")]
    pub max_depth: f64,
    /// Seconds between frames.
    #[serde(default = "default_frame_interval")]
    pub frame_interval: f64,
}

fn default_frame_interval() -> f64 {
    1.0 / 30.0
}

// JSON has no infinity; an absent or null value means unlimited.
mod max_depth_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl SyntheticSequence {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let seq: SyntheticSequence = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        seq.validate()?;
        Ok(seq)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sequence serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.scene.primitives.is_empty() {
            return Err(Error::InvalidConfig("scene has no primitives".into()));
        }
        for p in &self.scene.primitives {
            p.validate()?;
        }
        self.intrinsics.validate()?;
        self.noise.validate()?;
        self.trajectory.validate()?;
        if !(self.max_depth > 0.0) {
            return Err(Error::InvalidConfig("max_depth must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectory.frames
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.frames == 0
    }

    /// Per-frame random seed derived from the sequence seed.
    pub fn frame_seed(&self, frame: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(frame as u64 + 1);
        rng.random()
    }

    pub fn render(&self, frame: usize) -> Result<RenderedFrame> {
        let pose = self.trajectory.pose_at(frame)?;
        let mut out = render_synthetic(
            &self.scene,
            &pose,
            &self.intrinsics,
            &self.noise,
            self.max_depth,
            self.frame_seed(frame),
        )?;
        let t = frame as f64 * self.frame_interval;
        out.noisy.timestamp = t;
        out.clean.timestamp = t;
        Ok(out)
    }

    pub fn frames(&self) -> impl Iterator<Item = Result<RenderedFrame>> + '_ {
        (0..self.len()).map(|i| self.render(i))
    }

    /// Three orthogonal walls (floor `z = 0`, walls `x = 0` and `y = 0`) with a
    /// floating sphere, viewed along an arc facing the corner.
    pub fn room(frames: usize, noise: NoiseSettings, seed: u64) -> Self {
        let scene = Scene::new(vec![
            Primitive::plane(Point3::origin(), Vector3::z()),
            Primitive::plane(Point3::origin(), Vector3::x()),
            Primitive::plane(Point3::origin(), Vector3::y()),
            Primitive::Sphere {
                center: Point3::new(0.45, 0.45, 0.3),
                radius: 0.2,
            },
        ]);
        SyntheticSequence {
            scene,
            trajectory: Trajectory::orbit(
                Point3::new(0.3, 0.3, 0.25),
                1.1,
                0.9,
                (25.0, 65.0),
                5,
                frames,
            ),
            intrinsics: small_intrinsics(),
            noise,
            seed,
            max_depth: 2.0,
            frame_interval: default_frame_interval(),
        }
    }

    /// A lone sphere on an orbit.
    pub fn sphere(frames: usize, noise: NoiseSettings, seed: u64) -> Self {
        let scene = Scene::new(vec![Primitive::Sphere {
            center: Point3::new(0.0, 0.0, 0.0),
            radius: 0.2,
        }]);
        SyntheticSequence {
            scene,
            trajectory: Trajectory::orbit(Point3::origin(), 0.8, 0.3, (0.0, 120.0), 7, frames),
            intrinsics: small_intrinsics(),
            noise,
            seed,
            max_depth: 2.0,
            frame_interval: default_frame_interval(),
        }
    }

    /// Fronto-parallel wall at `distance` meters in front of a static camera
    /// at the origin looking down +z.
    pub fn wall(
        distance: f64,
        frames: usize,
        noise: NoiseSettings,
        seed: u64,
        intrinsics: CameraIntrinsics,
    ) -> Self {
        let scene = Scene::new(vec![Primitive::plane(
            Point3::new(0.0, 0.0, distance),
            -Vector3::z(),
        )]);
        SyntheticSequence {
            scene,
            trajectory: Trajectory {
                waypoints: vec![Waypoint {
                    position: Point3::origin(),
                    look_at: Point3::new(0.0, 0.0, 1.0),
                }],
                frames,
                up: -Vector3::y(),
            },
            intrinsics,
            noise,
            seed,
            max_depth: default_max_depth(),
            frame_interval: default_frame_interval(),
        }
    }
}

/// 320x240 pinhole used by the bundled scenes.
pub fn small_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 262.5,
        fy: 262.5,
        cx: 159.5,
        cy: 119.5,
        width: 320,
        height: 240,
    }
}
