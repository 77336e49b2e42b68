use nalgebra::{Translation3, Unit};
use psdf::extraction::Surfel;
use psdf::inlier::{
    collect_surfels, disk_distance, inlier_ratio, surfel_score, weight_angle, weight_dist,
    weight_radius, InlierConfig, Ray,
};
use psdf::pipeline::{PipelineConfig, Reconstructor};
use psdf::sensor::{CameraIntrinsics, DepthFrame};
use psdf::{Isometry3, Point3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

fn cfg() -> InlierConfig {
    InlierConfig::default()
}

fn surfel_at_origin(radius: f64) -> Surfel {
    Surfel {
        position: Point3::origin(),
        normal: Vector3::z_axis(),
        radius,
        confidence: 0.9,
    }
}

/// Ray looking down the surfel normal that ends at `point`.
fn ray_to(point: Point3<f64>) -> Ray {
    Ray::through(point + Vector3::new(0.0, 0.0, 1.0), point).unwrap()
}

#[test]
fn distance_weight_values() {
    let c = cfg();
    let s = surfel_at_origin(0.004);
    assert!((weight_dist(&s, &Point3::new(0.3, -0.2, 0.0), &c) - 1.0).abs() < TOL);
    assert!((weight_dist(&s, &Point3::new(0.0, 0.0, c.theta), &c) - (-0.5f64).exp()).abs() < TOL);
    assert!(
        (weight_dist(&s, &Point3::new(0.0, 0.0, -2.0 * c.theta), &c) - (-2.0f64).exp()).abs() < TOL
    );
    assert!((weight_dist(&s, &Point3::new(0.0, 0.0, c.theta), &c) - 0.60653).abs() < 1e-5);
    assert!((weight_dist(&s, &Point3::new(0.0, 0.0, 2.0 * c.theta), &c) - 0.13534).abs() < 1e-5);
}

fn angled_ray(alpha_deg: f64) -> Ray {
    let a = alpha_deg.to_radians();
    let dir = Vector3::new(a.sin(), 0.0, -a.cos());
    Ray::through(Point3::from(-dir), Point3::origin()).unwrap()
}

#[test]
fn angle_weight_values() {
    let c = cfg();
    let s = surfel_at_origin(0.004);
    assert!((weight_angle(&s, &angled_ray(0.0), &c) - 1.0).abs() < TOL);
    let cos80 = 80f64.to_radians().cos();
    let want60 = (0.5 - cos80) / (1.0 - cos80);
    assert!((weight_angle(&s, &angled_ray(60.0), &c) - want60).abs() < TOL);
    assert!((want60 - 0.3949).abs() < 5e-5);
    for deg in [80.0, 80.5, 85.0, 89.9, 90.0] {
        assert!(
            (weight_angle(&s, &angled_ray(deg), &c) - 0.1).abs() < TOL,
            "{deg}"
        );
    }
    // Flipping the stored normal does not change the weight.
    let flipped = Surfel {
        normal: -Vector3::z_axis(),
        ..s
    };
    assert!((weight_angle(&flipped, &angled_ray(60.0), &c) - want60).abs() < TOL);
    // Non-increasing below the cutoff.
    let mut prev = f64::INFINITY;
    for i in 0..80 {
        let w = weight_angle(&s, &angled_ray(i as f64), &c);
        assert!(w <= prev + TOL);
        assert!(w > 0.0 && w <= 1.0);
        prev = w;
    }
}

#[test]
fn radius_weight_values() {
    let c = cfg();
    let r = 0.004;
    let s = surfel_at_origin(r);
    assert!((weight_radius(&s, &Point3::new(0.0, 0.0, 0.01), &c) - 1.0).abs() < TOL);
    let at_r = weight_radius(&s, &Point3::new(r, 0.0, 0.0), &c);
    assert!((at_r - (0.5 + 1.0 / (1.0 + 1f64.exp()))).abs() < TOL);
    assert!((at_r - 0.76894).abs() < 1e-5);
    let far = weight_radius(&s, &Point3::new(0.0, 100.0 * r, 0.0), &c);
    assert!((far - c.gamma).abs() < TOL);
    assert!(far >= c.gamma);
    let mut prev = f64::INFINITY;
    for i in 0..50 {
        let w = weight_radius(&s, &Point3::new(i as f64 * 0.3 * r, 0.0, 0.0), &c);
        assert!(w < prev);
        prev = w;
    }
}

#[test]
fn ratio_uses_prior_and_max_rule() {
    let c = cfg();
    let p = Point3::origin();
    let ray = ray_to(p);
    assert!((inlier_ratio(&[], &ray, &c) - 0.1).abs() < TOL);

    let perfect = surfel_at_origin(0.004);
    assert!((surfel_score(&perfect, &ray, &c) - 1.0).abs() < TOL);
    assert!((inlier_ratio(&[perfect], &ray, &c) - 1.0).abs() < TOL);

    // Scores 0.3 and about 0.05 by placing the point off-plane.
    let off = |score: f64| {
        let d = c.theta * (-2.0 * score.ln()).sqrt();
        Surfel {
            position: Point3::new(0.0, 0.0, d),
            ..perfect
        }
    };
    let (a, b) = (off(0.05), off(0.3));
    assert!((surfel_score(&a, &ray, &c) - 0.05).abs() < TOL);
    assert!((surfel_score(&b, &ray, &c) - 0.3).abs() < TOL);
    assert!((inlier_ratio(&[a, b], &ray, &c) - 0.3).abs() < TOL);
    assert!((inlier_ratio(&[b, a], &ray, &c) - 0.3).abs() < TOL);
    assert!((inlier_ratio(&[a], &ray, &c) - 0.1).abs() < TOL);
}

fn random_surfel(rng: &mut ChaCha8Rng) -> Surfel {
    let n = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    Surfel {
        position: Point3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ),
        normal: Unit::new_normalize(n + Vector3::new(0.0, 0.0, 1e-3)),
        radius: rng.random_range(1e-3..1e-2),
        confidence: 0.8,
    }
}

#[test]
fn weights_are_invariant_under_rigid_motion() {
    let c = cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let s = random_surfel(&mut rng);
        let target = s.position
            + Vector3::new(
                rng.random_range(-0.02..0.02),
                rng.random_range(-0.02..0.02),
                rng.random_range(-0.02..0.02),
            );
        let origin = target
            + Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                1.5,
            );
        let ray = Ray::through(origin, target).unwrap();
        let m = Isometry3::from_parts(
            Translation3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ),
            UnitQuaternion::from_euler_angles(
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(-3.0..3.0),
            ),
        );
        let ms = Surfel {
            position: m * s.position,
            normal: m.rotation * s.normal,
            ..s
        };
        let mray = Ray::through(m * origin, m * target).unwrap();
        let p = ray.point();
        let mp = mray.point();
        let pairs = [
            (weight_dist(&s, &p, &c), weight_dist(&ms, &mp, &c)),
            (weight_radius(&s, &p, &c), weight_radius(&ms, &mp, &c)),
            (weight_angle(&s, &ray, &c), weight_angle(&ms, &mray, &c)),
            (disk_distance(&s, &p), disk_distance(&ms, &mp)),
        ];
        for (a, b) in pairs {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        let rho = inlier_ratio(&[s], &ray, &c);
        assert!((c.rho_prior..=1.0).contains(&rho));
    }
}

fn wall_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 60.0,
        fy: 60.0,
        cx: 31.5,
        cy: 23.5,
        width: 64,
        height: 48,
    }
}

fn wall_frame(depth: f64, i: usize) -> DepthFrame {
    let intr = wall_intrinsics();
    DepthFrame::new(
        vec![depth; intr.width * intr.height],
        intr,
        Isometry3::identity(),
        i as f64,
    )
    .unwrap()
}

#[test]
fn rho_starts_at_prior_and_rises_once_surfels_exist() {
    let mut rec = Reconstructor::new(&PipelineConfig::default()).unwrap();
    let first = rec.process(&wall_frame(1.0, 0)).unwrap().mean_rho.unwrap();
    assert!((first - 0.1).abs() < TOL, "{first}");
    let second = rec.process(&wall_frame(1.0, 1)).unwrap().mean_rho.unwrap();
    assert!(second > 0.1, "{second}");
}

#[test]
fn converged_plane_separates_inliers_from_displaced_points() {
    let depth = 1.0031;
    let mut rec = Reconstructor::new(&PipelineConfig::default()).unwrap();
    for i in 0..15 {
        rec.process(&wall_frame(depth, i)).unwrap();
    }
    rec.finish();
    let grid = rec.grid();
    let c = InlierConfig::for_voxel_size(grid.voxel_size());
    let origin = Point3::origin();
    let mut tested = 0;
    for block in grid.blocks() {
        for (_, s) in block.surfels.iter() {
            // Central part of the wall, where the surface is fully observed.
            if s.position.x.abs() > 0.2 || s.position.y.abs() > 0.15 {
                continue;
            }
            assert!((s.position.z - depth).abs() < 1e-3);
            // A fresh point on the plane next to the surfel center, nudged off
            // the edge line into the voxel that owns the slot.
            let p = Point3::new(s.position.x + 1e-5, s.position.y + 1e-5, depth);
            let ray = Ray::through(origin, p).unwrap();
            let rho = inlier_ratio(&collect_surfels(grid, &ray), &ray, &c);
            assert!(rho > 0.9, "inlier at {p} scored {rho}");
            let displaced = p + ray.dir.into_inner() * (5.0 * c.theta);
            let ray = Ray::through(origin, displaced).unwrap();
            let rho = inlier_ratio(&collect_surfels(grid, &ray), &ray, &c);
            assert!(rho < 0.2, "displaced point scored {rho}");
            tested += 1;
        }
    }
    assert!(tested > 100, "{tested}");
}

#[test]
fn generic_plane_points_keep_gamma_level_support() {
    let depth = 1.0031;
    let mut rec = Reconstructor::new(&PipelineConfig::default()).unwrap();
    for i in 0..15 {
        rec.process(&wall_frame(depth, i)).unwrap();
    }
    rec.finish();
    let grid = rec.grid();
    let c = InlierConfig::for_voxel_size(grid.voxel_size());
    for i in 0..200 {
        let x = -0.15 + 0.3 * (i as f64 * 0.618034 % 1.0);
        let y = -0.1 + 0.2 * (i as f64 * 0.754877 % 1.0);
        let on = Ray::through(Point3::origin(), Point3::new(x, y, depth)).unwrap();
        let rho = inlier_ratio(&collect_surfels(grid, &on), &on, &c);
        // Surfel radii shrink with sigma, so support away from a center tends to gamma.
        assert!(rho > 0.9 * c.gamma, "({x}, {y}) scored {rho}");
        let off = Ray {
            depth: on.depth + 5.0 * c.theta,
            ..on
        };
        assert!(inlier_ratio(&collect_surfels(grid, &off), &off, &c) < 0.2);
    }
}
