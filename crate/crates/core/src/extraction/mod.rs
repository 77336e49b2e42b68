//! Surfel and triangle extraction from the fused field.
//!
//! Surfels are placed at zero crossings of voxel edges whose corners are both
//! confident; marching cubes then links the surfels of each cell into
//! triangles, skipping edges whose corner uncertainty is too large.

pub mod mc;
mod mesh;

pub use mesh::{MeshVertex, PlyFormat, PlyMesh, TriangleMesh};

use nalgebra::{Point3, Unit, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::volume_grid::{
    voxel_local, Axis, BlockCoord, BlockGrid, PsdfVoxel, SurfelKey, SurfelSlots, TriangleRef,
    VoxelBlock, BLOCK_SIDE, VOXELS_PER_BLOCK,
};

/// An oriented disk constrained to a voxel edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surfel {
    pub position: Point3<f64>,
    pub normal: Unit<Vector3<f64>>,
    pub radius: f64,
    /// Lower of the two corner confidences.
    pub confidence: f64,
}

/// Which voxel field the surface is extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceField {
    #[default]
    Psdf,
    Tsdf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub pi_thr: f64,
    pub sigma_thr: f64,
    pub field: SurfaceField,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            pi_thr: 0.4,
            sigma_thr: 0.016,
            field: SurfaceField::Psdf,
        }
    }
}

impl ExtractionConfig {
    /// Defaults for a voxel size, with `sigma_thr` at twice the voxel size.
    pub fn for_voxel_size(voxel_size: f64) -> Self {
        ExtractionConfig {
            sigma_thr: 2.0 * voxel_size,
            ..Default::default()
        }
    }
}

/// Field sample at one voxel corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerSample {
    pub position: Point3<f64>,
    pub value: f64,
    pub confidence: f64,
    pub sigma: f64,
    /// Whether any observation reached the voxel. An unobserved zero is not a crossing.
    pub observed: bool,
    /// Unnormalized field gradient at the corner.
    pub gradient: Option<Vector3<f64>>,
}

impl CornerSample {
    pub fn psdf(voxel: &PsdfVoxel, position: Point3<f64>) -> Self {
        CornerSample {
            position,
            value: voxel.mu,
            confidence: voxel.confidence(),
            sigma: voxel.sigma,
            observed: voxel.is_observed(),
            gradient: None,
        }
    }
}

fn field_value(v: &PsdfVoxel, field: SurfaceField) -> Option<f64> {
    match field {
        SurfaceField::Psdf => Some(v.mu),
        SurfaceField::Tsdf => v.is_observed().then_some(v.tsdf_value),
    }
}

/// Sign change under the marching-cubes convention: negative is inside, zero
/// is outside. A zero only counts when the voxel was observed.
fn crosses(v1: f64, observed1: bool, v2: f64, observed2: bool) -> bool {
    (v1 < 0.0) != (v2 < 0.0) && (v1 != 0.0 || observed1) && (v2 != 0.0 || observed2)
}

fn passes_gate(c1: &CornerSample, c2: &CornerSample, cfg: &ExtractionConfig) -> bool {
    crosses(c1.value, c1.observed, c2.value, c2.observed)
        && (cfg.field == SurfaceField::Tsdf
            || (c1.confidence > cfg.pi_thr && c2.confidence > cfg.pi_thr))
}

/// Surfel on the edge `c1 -> c2`: emitted when the field changes sign along
/// the edge and (for the PSDF field) both corners are confident.
pub fn extract_surfel(
    c1: &CornerSample,
    c2: &CornerSample,
    cfg: &ExtractionConfig,
) -> Option<Surfel> {
    if !passes_gate(c1, c2, cfg) {
        return None;
    }
    let (m1, m2) = (c1.value.abs(), c2.value.abs());
    let w1 = m2 / (m1 + m2);
    let w2 = m1 / (m1 + m2);
    let position = Point3::from(c1.position.coords * w1 + c2.position.coords * w2);
    let radius = w1 * c1.sigma + w2 * c2.sigma;
    let gradient = match (c1.gradient, c2.gradient) {
        (Some(g1), Some(g2)) => g1 * w1 + g2 * w2,
        (Some(g), None) | (None, Some(g)) => g,
        (None, None) => return None,
    };
    let norm = gradient.norm();
    if !(norm >= 1e-9) || !(radius > 0.0) {
        return None;
    }
    Some(Surfel {
        position,
        normal: Unit::new_unchecked(gradient / norm),
        radius,
        confidence: c1.confidence.min(c2.confidence),
    })
}

/// The 27 blocks around (and including) a center block, for stencil access
/// by local voxel coordinates in `-8..16`.
struct Neighborhood<'a> {
    center: BlockCoord,
    blocks: [Option<&'a VoxelBlock>; 27],
}

impl<'a> Neighborhood<'a> {
    fn new(grid: &'a BlockGrid, center: BlockCoord) -> Self {
        let mut blocks = [None; 27];
        for (i, slot) in blocks.iter_mut().enumerate() {
            let (dx, dy, dz) = (
                (i % 3) as i32 - 1,
                ((i / 3) % 3) as i32 - 1,
                (i / 9) as i32 - 1,
            );
            *slot = grid.block(&center.offset(dx, dy, dz));
        }
        Neighborhood { center, blocks }
    }

    fn resolve(&self, l: [i64; 3]) -> Option<(&'a VoxelBlock, usize)> {
        const _: () = assert!(BLOCK_SIDE == 8);
        let b = l.map(|c| c >> 3);
        if b.iter().any(|c| !(-1..=1).contains(c)) {
            return None;
        }
        let slot = ((b[0] + 1) + 3 * (b[1] + 1) + 9 * (b[2] + 1)) as usize;
        let r = l.map(|c| (c & 7) as usize);
        self.blocks[slot].map(|blk| (blk, crate::volume_grid::voxel_index(r[0], r[1], r[2])))
    }

    fn voxel(&self, l: [i64; 3]) -> Option<&'a PsdfVoxel> {
        self.resolve(l).map(|(b, i)| &b.voxels[i])
    }

    fn sample(&self, l: [i64; 3], field: SurfaceField) -> Option<f64> {
        self.voxel(l).and_then(|v| field_value(v, field))
    }

    fn gradient(&self, l: [i64; 3], field: SurfaceField, h: f64) -> Option<Vector3<f64>> {
        let c = self.sample(l, field);
        let mut g = Vector3::zeros();
        for axis in 0..3 {
            let mut lp = l;
            lp[axis] += 1;
            let mut lm = l;
            lm[axis] -= 1;
            g[axis] = stencil(self.sample(lm, field), c, self.sample(lp, field), h)?;
        }
        Some(g)
    }

    fn global(&self, l: [i64; 3]) -> [i64; 3] {
        let o = self.center.global_voxel(0);
        [o[0] + l[0], o[1] + l[1], o[2] + l[2]]
    }
}

/// Central difference, one-sided where a neighbour is missing.
fn stencil(minus: Option<f64>, center: Option<f64>, plus: Option<f64>, h: f64) -> Option<f64> {
    match (minus, center, plus) {
        (Some(m), _, Some(p)) => Some((p - m) / (2.0 * h)),
        (Some(m), Some(c), None) => Some((c - m) / h),
        (None, Some(c), Some(p)) => Some((p - c) / h),
        _ => None,
    }
}

/// Unnormalized gradient of the field at a global voxel corner.
pub fn sdf_gradient(
    grid: &BlockGrid,
    voxel: [i64; 3],
    field: SurfaceField,
) -> Option<Vector3<f64>> {
    let (block, index) = BlockCoord::split_global(voxel);
    grid.block(&block)?;
    let nb = Neighborhood::new(grid, block);
    let l = voxel_local(index).map(|c| c as i64);
    nb.gradient(l, field, grid.voxel_size())
}

fn sample_at(
    nb: &Neighborhood,
    grid: &BlockGrid,
    l: [i64; 3],
    field: SurfaceField,
) -> Option<CornerSample> {
    let v = nb.voxel(l)?;
    let value = field_value(v, field)?;
    let (confidence, sigma) = match field {
        SurfaceField::Psdf => (v.confidence(), v.sigma),
        SurfaceField::Tsdf => (
            (v.tsdf_weight / crate::fusion::TSDF_MAX_WEIGHT).min(1.0),
            grid.voxel_size(),
        ),
    };
    Some(CornerSample {
        position: grid.global_position(nb.global(l)),
        value,
        confidence,
        sigma,
        observed: v.is_observed(),
        gradient: None,
    })
}

/// Recomputes the surfels on the edges owned by one block.
pub fn extract_block_surfels(
    grid: &BlockGrid,
    coord: BlockCoord,
    cfg: &ExtractionConfig,
) -> SurfelSlots {
    let nb = Neighborhood::new(grid, coord);
    let Some(block) = nb.blocks[13] else {
        return SurfelSlots::default();
    };
    let h = grid.voxel_size();
    // Cheap sign and confidence screen before any sample is built.
    let screen = |v: &PsdfVoxel| -> Option<f64> {
        let f = field_value(v, cfg.field)?;
        ((f != 0.0 || v.is_observed())
            && (cfg.field == SurfaceField::Tsdf || v.confidence() > cfg.pi_thr))
            .then_some(f)
    };
    let mut entries = Vec::new();
    for index in 0..VOXELS_PER_BLOCK {
        let Some(f1) = screen(&block.voxels[index]) else {
            continue;
        };
        let l = voxel_local(index).map(|c| c as i64);
        let mut c1 = None;
        let mut g1 = None;
        for axis in Axis::ALL {
            let mut l2 = l;
            l2[axis as usize] += 1;
            let Some(v2) = nb.voxel(l2) else { continue };
            match screen(v2) {
                Some(f2) if (f1 < 0.0) != (f2 < 0.0) => {}
                _ => continue,
            }
            let Some(mut s1) = c1.or_else(|| sample_at(&nb, grid, l, cfg.field)) else {
                continue;
            };
            c1 = Some(s1);
            let Some(mut s2) = sample_at(&nb, grid, l2, cfg.field) else {
                continue;
            };
            if g1.is_none() {
                g1 = Some(nb.gradient(l, cfg.field, h));
            }
            s1.gradient = g1.flatten();
            s2.gradient = nb.gradient(l2, cfg.field, h);
            if let Some(s) = extract_surfel(&s1, &s2, cfg) {
                entries.push(((index * 3 + axis as usize) as u16, s));
            }
        }
    }
    SurfelSlots::from_sorted(entries)
}

/// Marching-cubes triangles of every cell whose minimal corner lies in the block.
/// Triangles touching an edge without a surfel, or (PSDF field) an edge with a
/// corner sigma above `sigma_thr`, are dropped.
pub fn extract_block_triangles(
    grid: &BlockGrid,
    coord: BlockCoord,
    cfg: &ExtractionConfig,
) -> Vec<TriangleRef> {
    let nb = Neighborhood::new(grid, coord);
    let mut out = Vec::new();
    // Cells need a surfel on at least one of their edges, and every edge
    // belongs to this block or one of its +x/+y/+z neighbours.
    let any_surfels = (0..8).any(|c| {
        let o = mc::corner_offset(c);
        nb.blocks[((o[0] + 1) + 3 * (o[1] + 1) + 9 * (o[2] + 1)) as usize]
            .is_some_and(|b| !b.surfels.is_empty())
    });
    if !any_surfels {
        return out;
    }
    // Field values at local corners 0..=8 on each axis; NaN where unavailable.
    const H: usize = BLOCK_SIDE + 1;
    let mut values = [f64::NAN; H * H * H];
    for z in 0..H {
        for y in 0..H {
            for x in 0..H {
                if let Some(v) = nb.sample([x as i64, y as i64, z as i64], cfg.field) {
                    values[x + H * (y + H * z)] = v;
                }
            }
        }
    }
    // Usable surfel per edge, indexed by owner corner and axis.
    let mut edges = vec![None; H * H * H * 3];
    for c in 0..8u8 {
        let o = mc::corner_offset(c);
        let Some(block) = nb.blocks[((o[0] + 1) + 3 * (o[1] + 1) + 9 * (o[2] + 1)) as usize] else {
            continue;
        };
        let base = o.map(|v| v * BLOCK_SIDE as i64);
        for (slot, _) in block.surfels.iter() {
            let voxel = slot as usize / 3;
            let axis = Axis::from_index(slot as usize % 3);
            let r = voxel_local(voxel);
            let owner = [
                base[0] + r[0] as i64,
                base[1] + r[1] as i64,
                base[2] + r[2] as i64,
            ];
            if owner.iter().any(|&v| v >= H as i64) {
                continue;
            }
            if cfg.field == SurfaceField::Psdf {
                let mut other = owner;
                other[axis as usize] += 1;
                let (Some(v1), Some(v2)) = (nb.voxel(owner), nb.voxel(other)) else {
                    continue;
                };
                if v1.sigma > cfg.sigma_thr || v2.sigma > cfg.sigma_thr {
                    continue;
                }
            }
            let i = owner[0] as usize + H * (owner[1] as usize + H * owner[2] as usize);
            edges[i * 3 + axis as usize] = Some(SurfelKey::new(block.coord, voxel, axis));
        }
    }
    'cells: for index in 0..VOXELS_PER_BLOCK {
        let l = voxel_local(index).map(|c| c as i64);
        let mut case = 0u8;
        for c in 0..8u8 {
            let o = mc::corner_offset(c);
            let value = values[(l[0] + o[0]) as usize
                + H * ((l[1] + o[1]) as usize + H * (l[2] + o[2]) as usize)];
            if value.is_nan() {
                continue 'cells;
            }
            if value < 0.0 {
                case |= 1 << c;
            }
        }
        let table = &mc::TRIANGLES[case as usize];
        if table.is_empty() {
            continue;
        }
        let edge_key = |e: usize| -> Option<SurfelKey> {
            let (c, axis) = mc::EDGES[e];
            let o = mc::corner_offset(c);
            let owner = [
                (l[0] + o[0]) as usize,
                (l[1] + o[1]) as usize,
                (l[2] + o[2]) as usize,
            ];
            edges[(owner[0] + H * (owner[1] + H * owner[2])) * 3 + axis as usize]
        };
        for tri in table {
            if let (Some(a), Some(b), Some(c)) = (
                edge_key(tri[0] as usize),
                edge_key(tri[1] as usize),
                edge_key(tri[2] as usize),
            ) {
                out.push([a, b, c]);
            }
        }
    }
    out
}

/// Result of a full extraction pass.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub mesh: TriangleMesh,
    /// Surfels now stored in the grid, including those not referenced by any triangle.
    pub surfel_count: usize,
}

/// Refreshes all surfel slots, then all block triangle lists, and assembles
/// the mesh in canonical order (block coordinate, voxel index, edge axis).
/// The refreshed slots are the surfel snapshot the next fusion pass reads.
pub fn extract_all(grid: &mut BlockGrid, cfg: &ExtractionConfig) -> Extraction {
    grid.take_dirty();
    let coords = grid.sorted_coords();
    refresh(grid, cfg, &coords, &coords)
}

/// Same result as [`extract_all`] provided the thresholds are unchanged
/// since the previous extraction, recomputing only blocks affected by voxels
/// modified since then. Surfels read the stencil neighbourhood (one block in
/// every direction); triangles read surfels from the `+x/+y/+z` side.
pub fn extract_changed(grid: &mut BlockGrid, cfg: &ExtractionConfig) -> Extraction {
    let changed = grid.take_dirty();
    let dilate = |set: &[BlockCoord], range: std::ops::RangeInclusive<i32>| -> Vec<BlockCoord> {
        let mut out = std::collections::BTreeSet::new();
        for c in set {
            for dz in range.clone() {
                for dy in range.clone() {
                    for dx in range.clone() {
                        let n = c.offset(dx, dy, dz);
                        if grid.contains(&n) {
                            out.insert(n);
                        }
                    }
                }
            }
        }
        out.into_iter().collect()
    };
    let surfel_blocks = dilate(&changed, -1..=1);
    let triangle_blocks = dilate(&surfel_blocks, -1..=0);
    refresh(grid, cfg, &surfel_blocks, &triangle_blocks)
}

fn refresh(
    grid: &mut BlockGrid,
    cfg: &ExtractionConfig,
    surfel_blocks: &[BlockCoord],
    triangle_blocks: &[BlockCoord],
) -> Extraction {
    let slots: Vec<SurfelSlots> = {
        let g = &*grid;
        surfel_blocks
            .par_iter()
            .map(|c| extract_block_surfels(g, *c, cfg))
            .collect()
    };
    let map = grid.blocks_map_mut();
    for (c, s) in surfel_blocks.iter().zip(slots) {
        map.get_mut(c).expect("listed block").surfels = s;
    }

    let tris: Vec<Vec<TriangleRef>> = {
        let g = &*grid;
        triangle_blocks
            .par_iter()
            .map(|c| extract_block_triangles(g, *c, cfg))
            .collect()
    };
    let map = grid.blocks_map_mut();
    for (c, t) in triangle_blocks.iter().zip(tris) {
        map.get_mut(c).expect("listed block").triangles = t;
    }

    let coords = grid.sorted_coords();
    let surfel_count = coords
        .iter()
        .map(|c| grid.block(c).expect("listed block").surfels.len())
        .sum();
    Extraction {
        mesh: assemble_mesh(grid, &coords),
        surfel_count,
    }
}

fn assemble_mesh(grid: &BlockGrid, coords: &[BlockCoord]) -> TriangleMesh {
    let mut keys: Vec<SurfelKey> = coords
        .iter()
        .flat_map(|c| {
            grid.block(c)
                .expect("listed block")
                .triangles
                .iter()
                .flatten()
                .copied()
        })
        .collect();
    keys.sort_unstable();
    keys.dedup();
    let vertices = keys
        .iter()
        .map(|k| MeshVertex {
            key: *k,
            surfel: *grid.surfel(k).expect("triangle references a stored surfel"),
        })
        .collect();
    let index_of = |k: &SurfelKey| keys.binary_search(k).expect("collected key") as u32;
    let triangles = coords
        .iter()
        .flat_map(|c| grid.block(c).expect("listed block").triangles.iter())
        .map(|t| [index_of(&t[0]), index_of(&t[1]), index_of(&t[2])])
        .collect();
    TriangleMesh {
        vertices,
        triangles,
    }
}
