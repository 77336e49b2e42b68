#![allow(dead_code)]

pub mod quadrature;

use psdf::fusion::{psdf_update, NumericFloors, SdfObservation};
use psdf::volume_grid::PsdfVoxel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use quadrature::{Observation, State};

pub const TRUNCATION: f64 = 0.054;

pub fn voxel(s: &State) -> PsdfVoxel {
    PsdfVoxel {
        a: s.a,
        b: s.b,
        mu: s.mu,
        sigma: s.sigma,
        tsdf_value: 0.0,
        tsdf_weight: 0.0,
    }
}

pub fn sdf_obs(o: &Observation) -> SdfObservation {
    SdfObservation {
        d_obs: o.d,
        tau: o.tau,
        rho: o.rho,
        band: o.band,
    }
}

pub fn step(s: &State, o: &Observation) -> PsdfVoxel {
    psdf_update(&voxel(s), &sdf_obs(o), &NumericFloors::default())
}

/// Worst relative errors of (mu, sigma^2, E[pi]) over `n` random single-step
/// updates drawn from the stated parameter box.
pub fn oracle_sweep(n: usize, seed: u64) -> [f64; 3] {
    let t = TRUNCATION;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 3];
    for _ in 0..n {
        let s = State {
            mu: rng.random_range(-t..=t),
            sigma: rng.random_range(1e-3..=t),
            a: rng.random_range(1.0..=50.0),
            b: rng.random_range(1.0..=50.0),
        };
        let o = Observation {
            d: rng.random_range(-t..=t),
            tau: rng.random_range(1e-3..=0.03),
            rho: rng.random_range(0.05..=0.95),
            band: t,
        };
        let got = step(&s, &o);
        let want = quadrature::posterior_moments(&s, &o);
        let errs = [
            quadrature::rel_err(got.mu, want.mean_d),
            quadrature::rel_err(got.sigma * got.sigma, want.var_d),
            quadrature::rel_err(got.confidence(), want.mean_pi),
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
    }
    worst
}

/// Grid holding the exact SDF of a sphere in `mu` (and the TSDF field), with
/// uniform high confidence, over every block within two blocks of the surface.
pub fn analytic_sphere_grid(
    voxel_size: f64,
    center: psdf::Point3<f64>,
    radius: f64,
) -> psdf::volume_grid::BlockGrid {
    use psdf::volume_grid::{BlockCoord, BlockGrid, VOXELS_PER_BLOCK};
    let mut grid = BlockGrid::new(voxel_size, 3.0 * voxel_size).unwrap();
    let side = grid.block_side();
    let reach = ((radius + 2.0 * side) / side).ceil() as i32 + 1;
    let c = grid.locate(&center).0;
    for z in -reach..=reach {
        for y in -reach..=reach {
            for x in -reach..=reach {
                let coord = BlockCoord::new(c.x + x, c.y + y, c.z + z);
                let mid = grid.voxel_position(coord, 0) + psdf::Vector3::repeat(0.5 * side);
                let dist = ((mid - center).norm() - radius).abs();
                if dist > 2.0 * side {
                    continue;
                }
                let positions: Vec<_> = (0..VOXELS_PER_BLOCK)
                    .map(|i| grid.voxel_position(coord, i))
                    .collect();
                let block = grid.ensure_block(coord);
                for (v, p) in block.voxels.iter_mut().zip(positions) {
                    let sdf = (p - center).norm() - radius;
                    *v = PsdfVoxel {
                        a: 100.0,
                        b: 1.0,
                        mu: sdf,
                        sigma: 1e-3,
                        tsdf_value: sdf,
                        tsdf_weight: 1.0,
                    };
                }
            }
        }
    }
    grid
}
