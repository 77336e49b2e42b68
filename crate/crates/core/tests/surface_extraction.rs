mod common;

use std::time::Instant;

use psdf::extraction::{
    extract_all, extract_changed, ExtractionConfig, SurfaceField, TriangleMesh,
};
use psdf::pipeline::{PipelineConfig, Reconstructor};
use psdf::sensor::synthetic::{NoiseSettings, SyntheticSequence};
use psdf::Point3;

const VOXEL: f64 = 0.008;
const RADIUS: f64 = 0.2;

struct SphereFit {
    max_deviation: f64,
    max_normal_deg: f64,
    outward_faces: usize,
}

fn sphere_fit(mesh: &TriangleMesh, center: Point3<f64>) -> SphereFit {
    let mut fit = SphereFit {
        max_deviation: 0.0,
        max_normal_deg: 0.0,
        outward_faces: 0,
    };
    for v in &mesh.vertices {
        let r = v.surfel.position - center;
        fit.max_deviation = fit.max_deviation.max((r.norm() - RADIUS).abs());
        let cos = v.surfel.normal.dot(&r.normalize()).clamp(-1.0, 1.0);
        fit.max_normal_deg = fit.max_normal_deg.max(cos.acos().to_degrees());
    }
    let p: Vec<_> = mesh.positions().collect();
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| p[i as usize]);
        let n = (b - a).cross(&(c - a));
        if n.dot(&(a - center)) >= 0.0 {
            fit.outward_faces += 1;
        }
    }
    fit
}

fn check_sphere(center: Point3<f64>, field: SurfaceField) {
    let start = Instant::now();
    let mut grid = common::analytic_sphere_grid(VOXEL, center, RADIUS);
    let cfg = ExtractionConfig {
        field,
        ..ExtractionConfig::for_voxel_size(VOXEL)
    };
    let mesh = extract_all(&mut grid, &cfg).mesh;
    let elapsed = start.elapsed().as_secs_f64();
    assert!(!mesh.is_empty());
    assert!(mesh.is_closed(), "mesh not closed");
    assert_eq!(mesh.euler_characteristic(), 2);
    let fit = sphere_fit(&mesh, center);
    let half_diagonal = 0.5 * VOXEL * 3f64.sqrt();
    assert!(
        fit.max_deviation <= half_diagonal,
        "deviation {}",
        fit.max_deviation
    );
    assert!(
        fit.max_normal_deg <= 3.0,
        "normal error {} deg",
        fit.max_normal_deg
    );
    assert_eq!(
        fit.outward_faces,
        mesh.triangle_count(),
        "inward-facing triangles"
    );
    assert!(elapsed < 10.0, "took {elapsed} s");
}

#[test]
fn analytic_sphere_grid_aligned() {
    check_sphere(Point3::origin(), SurfaceField::Psdf);
}

#[test]
fn analytic_sphere_off_grid() {
    check_sphere(Point3::new(0.0031, -0.0017, 0.0053), SurfaceField::Psdf);
}

#[test]
fn analytic_sphere_tsdf_field() {
    check_sphere(Point3::new(0.0031, -0.0017, 0.0053), SurfaceField::Tsdf);
}

fn noisy_reconstruction(frames: usize) -> (PipelineConfig, Reconstructor) {
    let cfg = PipelineConfig {
        voxel_size: 0.01,
        ..Default::default()
    };
    let seq = SyntheticSequence::sphere(frames, NoiseSettings::with_outliers(0.1, 0.2), 4);
    let mut rec = Reconstructor::new(&cfg).unwrap();
    for f in seq.frames() {
        rec.process(&f.unwrap().noisy).unwrap();
    }
    (cfg, rec)
}

#[test]
fn incremental_extraction_matches_full() {
    let (cfg, mut rec) = noisy_reconstruction(6);
    let incremental = rec.finish().clone();
    let full = extract_all(rec.grid_mut(), &cfg.extraction_config()).mesh;
    assert!(!full.is_empty());
    assert_eq!(incremental.vertices, full.vertices);
    assert_eq!(incremental.triangles, full.triangles);
    // Nothing changed since: a changed-only pass is a no-op.
    let again = extract_changed(rec.grid_mut(), &cfg.extraction_config()).mesh;
    assert_eq!(again.triangles, full.triangles);
}

#[test]
fn gating_thresholds_are_monotone() {
    let (cfg, mut rec) = noisy_reconstruction(4);
    let base = cfg.extraction_config();
    let surfels: Vec<usize> = [0.2, 0.4, 0.6]
        .iter()
        .map(|&pi_thr| {
            rec.extract_with(&ExtractionConfig { pi_thr, ..base })
                .surfel_count
        })
        .collect();
    assert!(
        surfels.windows(2).all(|w| w[0] >= w[1]),
        "surfels {surfels:?}"
    );
    assert!(surfels[0] > surfels[2]);
    let triangles: Vec<usize> = [0.5, 1.0, 2.0, 4.0, 8.0]
        .iter()
        .map(|&k| {
            let sigma_thr = k * cfg.voxel_size;
            rec.extract_with(&ExtractionConfig { sigma_thr, ..base })
                .mesh
                .triangle_count()
        })
        .collect();
    assert!(
        triangles.windows(2).all(|w| w[0] <= w[1]),
        "triangles {triangles:?}"
    );
    assert!(triangles[0] < triangles[4]);
}
