//! Sparse voxel-block storage.
//!
//! Space is split into blocks of 8x8x8 voxels kept in a hash map keyed by
//! integer block coordinates. Each voxel stores one PSDF sample at its
//! minimal corner and owns the three edges leaving that corner along +x, +y
//! and +z; a surfel can live on each of those edges.

use std::collections::{HashMap, HashSet};
use std::hash::{BuildHasherDefault, Hash, Hasher};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::extraction::Surfel;
use crate::sensor::DepthFrame;
use crate::traversal::{cell_of, traverse_cells};
use crate::{Error, Result};

pub const BLOCK_SIDE: usize = 8;
pub const VOXELS_PER_BLOCK: usize = BLOCK_SIDE * BLOCK_SIDE * BLOCK_SIDE;
/// Surfel slots per block: one per voxel edge.
pub const SLOTS_PER_BLOCK: usize = VOXELS_PER_BLOCK * 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockCoord {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl Hash for BlockCoord {
    fn hash<H: Hasher>(&self, state: &mut H) {
        // Classic prime-multiply spatial hash, mixed into a single word.
        let h = (self.x as u32 as u64).wrapping_mul(73_856_093)
            ^ (self.y as u32 as u64).wrapping_mul(19_349_663)
            ^ (self.z as u32 as u64).wrapping_mul(83_492_791);
        state.write_u64(h);
    }
}

/// Hasher for [`BlockCoord`] keys; finalizes the single word written by its `Hash` impl.
#[derive(Debug, Default, Clone, Copy)]
pub struct BlockHasher(u64);

impl Hasher for BlockHasher {
    fn finish(&self) -> u64 {
        // splitmix64 finalizer so that the high bits used by the table vary.
        let mut z = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = self.0.rotate_left(8) ^ b as u64;
        }
    }

    fn write_u64(&mut self, v: u64) {
        self.0 ^= v;
    }
}

pub type BlockMap<V> = HashMap<BlockCoord, V, BuildHasherDefault<BlockHasher>>;
pub type BlockSet = HashSet<BlockCoord, BuildHasherDefault<BlockHasher>>;

impl BlockCoord {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        BlockCoord { x, y, z }
    }

    pub fn offset(self, dx: i32, dy: i32, dz: i32) -> Self {
        BlockCoord::new(self.x + dx, self.y + dy, self.z + dz)
    }

    /// Splits a global voxel index into its block and intra-block index.
    pub fn split_global(g: [i64; 3]) -> (BlockCoord, usize) {
        let side = BLOCK_SIDE as i64;
        let b = g.map(|c| c.div_euclid(side) as i32);
        let l = g.map(|c| c.rem_euclid(side) as usize);
        (
            BlockCoord::new(b[0], b[1], b[2]),
            voxel_index(l[0], l[1], l[2]),
        )
    }

    /// Global index of voxel `index` inside this block.
    pub fn global_voxel(self, index: usize) -> [i64; 3] {
        let [lx, ly, lz] = voxel_local(index);
        let side = BLOCK_SIDE as i64;
        [
            self.x as i64 * side + lx as i64,
            self.y as i64 * side + ly as i64,
            self.z as i64 * side + lz as i64,
        ]
    }
}

/// x-fastest linear index of local voxel `(x, y, z)`.
pub const fn voxel_index(x: usize, y: usize, z: usize) -> usize {
    x + BLOCK_SIDE * y + BLOCK_SIDE * BLOCK_SIDE * z
}

pub const fn voxel_local(index: usize) -> [usize; 3] {
    [
        index % BLOCK_SIDE,
        (index / BLOCK_SIDE) % BLOCK_SIDE,
        index / (BLOCK_SIDE * BLOCK_SIDE),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X = 0,
    Y = 1,
    Z = 2,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn unit(self) -> [i64; 3] {
        let mut u = [0; 3];
        u[self as usize] = 1;
        u
    }

    pub fn from_index(i: usize) -> Axis {
        Axis::ALL[i]
    }
}

/// Per-voxel PSDF posterior `Beta(pi | a, b) * N(D | mu, sigma^2)` plus the
/// weighted-average TSDF baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdfVoxel {
    pub a: f64,
    pub b: f64,
    pub mu: f64,
    pub sigma: f64,
    pub tsdf_value: f64,
    pub tsdf_weight: f64,
}

impl PsdfVoxel {
    pub fn from_prior(prior: &VoxelPrior) -> Self {
        PsdfVoxel {
            a: prior.a,
            b: prior.b,
            mu: 0.0,
            sigma: prior.sigma,
            tsdf_value: 0.0,
            tsdf_weight: 0.0,
        }
    }

    /// Expected inlier ratio `a / (a + b)`.
    pub fn confidence(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    /// Whether the voxel has received at least one observation.
    pub fn is_observed(&self) -> bool {
        self.tsdf_weight > 0.0
    }
}

/// Initial state of freshly allocated voxels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelPrior {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
}

impl VoxelPrior {
    /// Symmetric Beta prior with `count` pseudo-observations on each side;
    /// sigma spans the whole truncation band.
    pub fn symmetric(count: f64, truncation: f64) -> Self {
        VoxelPrior {
            a: count,
            b: count,
            sigma: truncation,
        }
    }
}

/// Default pseudo-count of the symmetric Beta prior.
pub const DEFAULT_PRIOR_COUNT: f64 = 2.0;

/// Identifies one surfel slot: a block and `voxel * 3 + axis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SurfelKey {
    pub block: BlockCoord,
    pub slot: u16,
}

impl SurfelKey {
    pub fn new(block: BlockCoord, voxel: usize, axis: Axis) -> Self {
        SurfelKey {
            block,
            slot: (voxel * 3 + axis as usize) as u16,
        }
    }

    /// Owning voxel in global voxel coordinates and the edge axis.
    pub fn from_global(g: [i64; 3], axis: Axis) -> Self {
        let (block, voxel) = BlockCoord::split_global(g);
        SurfelKey::new(block, voxel, axis)
    }

    pub fn voxel(&self) -> usize {
        self.slot as usize / 3
    }

    pub fn axis(&self) -> Axis {
        Axis::from_index(self.slot as usize % 3)
    }
}

/// Sparse surfel storage for one block, sorted by slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfelSlots {
    entries: Vec<(u16, Surfel)>,
}

impl SurfelSlots {
    /// Builds slots from entries already sorted by slot, without duplicates.
    pub fn from_sorted(entries: Vec<(u16, Surfel)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        SurfelSlots { entries }
    }

    pub fn get(&self, voxel: usize, axis: Axis) -> Option<&Surfel> {
        self.get_slot((voxel * 3 + axis as usize) as u16)
    }

    pub fn get_slot(&self, slot: u16) -> Option<&Surfel> {
        self.entries
            .binary_search_by_key(&slot, |(s, _)| *s)
            .ok()
            .map(|i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, &Surfel)> {
        self.entries.iter().map(|(s, surfel)| (*s, surfel))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Triangle linking three surfels, possibly owned by different blocks.
pub type TriangleRef = [SurfelKey; 3];

#[derive(Debug, Clone)]
pub struct VoxelBlock {
    pub coord: BlockCoord,
    pub voxels: Box<[PsdfVoxel]>,
    pub surfels: SurfelSlots,
    pub triangles: Vec<TriangleRef>,
}

impl VoxelBlock {
    pub fn new(coord: BlockCoord, prior: &VoxelPrior) -> Self {
        VoxelBlock {
            coord,
            voxels: vec![PsdfVoxel::from_prior(prior); VOXELS_PER_BLOCK].into_boxed_slice(),
            surfels: SurfelSlots::default(),
            triangles: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockGrid {
    blocks: BlockMap<VoxelBlock>,
    /// Blocks whose voxels may have changed since the last extraction.
    dirty: BlockSet,
    voxel_size: f64,
    truncation: f64,
    prior: VoxelPrior,
}

impl BlockGrid {
    pub fn new(voxel_size: f64, truncation: f64) -> Result<Self> {
        Self::with_prior(
            voxel_size,
            truncation,
            VoxelPrior::symmetric(DEFAULT_PRIOR_COUNT, truncation),
        )
    }

    pub fn with_prior(voxel_size: f64, truncation: f64, prior: VoxelPrior) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "voxel size must be positive, got {voxel_size}"
            )));
        }
        if !(truncation > 0.0 && truncation.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "truncation must be positive, got {truncation}"
            )));
        }
        if !(prior.a > 0.0 && prior.b > 0.0 && prior.sigma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "invalid voxel prior {prior:?}"
            )));
        }
        Ok(BlockGrid {
            blocks: BlockMap::default(),
            dirty: BlockSet::default(),
            voxel_size,
            truncation,
            prior,
        })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn prior(&self) -> &VoxelPrior {
        &self.prior
    }

    pub fn block_side(&self) -> f64 {
        self.voxel_size * BLOCK_SIDE as f64
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Global voxel whose minimal-corner cell contains `p`.
    pub fn global_voxel_of(&self, p: &Point3<f64>) -> [i64; 3] {
        cell_of(p, self.voxel_size)
    }

    /// Block and intra-block voxel index whose cell contains `p`.
    pub fn locate(&self, p: &Point3<f64>) -> (BlockCoord, usize) {
        BlockCoord::split_global(self.global_voxel_of(p))
    }

    /// World position of the sample corner of a global voxel.
    pub fn global_position(&self, g: [i64; 3]) -> Point3<f64> {
        Point3::new(g[0] as f64, g[1] as f64, g[2] as f64) * self.voxel_size
    }

    pub fn voxel_position(&self, block: BlockCoord, index: usize) -> Point3<f64> {
        self.global_position(block.global_voxel(index))
    }

    pub fn block(&self, coord: &BlockCoord) -> Option<&VoxelBlock> {
        self.blocks.get(coord)
    }

    /// Mutable access; the block is marked dirty.
    pub fn block_mut(&mut self, coord: &BlockCoord) -> Option<&mut VoxelBlock> {
        let b = self.blocks.get_mut(coord)?;
        self.dirty.insert(*coord);
        Some(b)
    }

    pub fn contains(&self, coord: &BlockCoord) -> bool {
        self.blocks.contains_key(coord)
    }

    /// Returns the block at `coord`, allocating it with the grid prior if needed.
    pub fn ensure_block(&mut self, coord: BlockCoord) -> &mut VoxelBlock {
        let prior = self.prior;
        self.dirty.insert(coord);
        self.blocks
            .entry(coord)
            .or_insert_with(|| VoxelBlock::new(coord, &prior))
    }

    pub fn voxel_global(&self, g: [i64; 3]) -> Option<&PsdfVoxel> {
        let (block, index) = BlockCoord::split_global(g);
        self.blocks.get(&block).map(|b| &b.voxels[index])
    }

    pub fn surfel(&self, key: &SurfelKey) -> Option<&Surfel> {
        self.blocks.get(&key.block)?.surfels.get_slot(key.slot)
    }

    /// Block coordinates in canonical (lexicographic) order.
    pub fn sorted_coords(&self) -> Vec<BlockCoord> {
        let mut coords: Vec<_> = self.blocks.keys().copied().collect();
        coords.sort_unstable();
        coords
    }

    pub fn blocks(&self) -> impl Iterator<Item = &VoxelBlock> {
        self.blocks.values()
    }

    pub(crate) fn blocks_map_mut(&mut self) -> &mut BlockMap<VoxelBlock> {
        &mut self.blocks
    }

    pub fn mark_dirty(&mut self, coord: BlockCoord) {
        self.dirty.insert(coord);
    }

    pub fn is_dirty(&self, coord: &BlockCoord) -> bool {
        self.dirty.contains(coord)
    }

    /// Dirty blocks in canonical order; the set is cleared.
    pub fn take_dirty(&mut self) -> Vec<BlockCoord> {
        let mut v: Vec<_> = self.dirty.drain().collect();
        v.sort_unstable();
        v
    }

    /// Allocates every block crossed by the viewing ray of each valid pixel
    /// within `±truncation` (in depth) of the observed point. Returns the
    /// number of newly created blocks.
    pub fn allocate_for_frame(&mut self, frame: &DepthFrame) -> Result<usize> {
        frame.validate_pose()?;
        let intr = &frame.intrinsics;
        let side = self.block_side();
        let mut touched = BlockSet::default();
        for v in 0..intr.height {
            for u in 0..intr.width {
                let Some(z) = frame.depth_at(u, v) else {
                    continue;
                };
                let near = (z - self.truncation).max(1e-6);
                let far = z + self.truncation;
                let a = frame.pose * intr.unproject(u as f64, v as f64, near);
                let b = frame.pose * intr.unproject(u as f64, v as f64, far);
                traverse_cells(&a, &b, side, |c| {
                    touched.insert(BlockCoord::new(c[0] as i32, c[1] as i32, c[2] as i32));
                });
            }
        }
        let mut fresh: Vec<_> = touched
            .into_iter()
            .filter(|c| !self.blocks.contains_key(c))
            .collect();
        fresh.sort_unstable();
        let prior = self.prior;
        for c in &fresh {
            self.blocks.insert(*c, VoxelBlock::new(*c, &prior));
            self.dirty.insert(*c);
        }
        Ok(fresh.len())
    }

    /// The two corner voxels of the edge leaving voxel `index` of `block` along
    /// `axis`. `None` when either endpoint's block is not allocated.
    pub fn edge_corner_pair(
        &self,
        block: BlockCoord,
        index: usize,
        axis: Axis,
    ) -> Option<(&PsdfVoxel, &PsdfVoxel)> {
        let first = &self.blocks.get(&block)?.voxels[index];
        let g = block.global_voxel(index);
        let u = axis.unit();
        let second = self.voxel_global([g[0] + u[0], g[1] + u[1], g[2] + u[2]])?;
        Some((first, second))
    }
}
