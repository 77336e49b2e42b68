//! Probabilistic signed distance (PSDF) volumetric fusion.
//!
//! Depth frames are fused into a sparse, spatially hashed voxel grid whose
//! voxels carry a joint Beta x Gaussian posterior over the signed distance
//! and its inlier ratio. Confidence-gated surfels are extracted on voxel
//! edges at zero crossings and linked into a shared-vertex triangle mesh by
//! marching cubes. A weighted-average TSDF baseline is maintained alongside
//! for comparison.
//!
//! The usual per-frame loop is:
//!
//! ```no_run
//! # use psdf::{volume_grid::BlockGrid, fusion, extraction, sensor};
//! # fn frames() -> Vec<sensor::DepthFrame> { vec![] }
//! let mut grid = BlockGrid::new(0.008, 0.054).unwrap();
//! let fusion_cfg = fusion::FusionConfig::for_voxel_size(0.008);
//! let extract_cfg = extraction::ExtractionConfig::default();
//! for frame in frames() {
//!     grid.allocate_for_frame(&frame).unwrap();
//!     fusion::fuse_frame(&mut grid, &frame, &fusion_cfg);
//!     let _mesh = extraction::extract_all(&mut grid, &extract_cfg);
//! }
//! ```

pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod fusion;
pub mod inlier;
pub mod pipeline;
pub mod sensor;
pub mod traversal;
pub mod volume_grid;

pub use error::{Error, Result};
pub use nalgebra::{Isometry3, Point3, Quaternion, UnitQuaternion, Vector3};
