//! Accuracy, mesh size and timing reports.

use std::fmt::Write as _;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::extraction::TriangleMesh;
use crate::sensor::synthetic::Scene;
use crate::{Error, Result};

pub const DEFAULT_BUCKET_WIDTH: f64 = 0.001;
pub const DEFAULT_HEAD_THRESHOLD: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    pub bucket_width: f64,
    pub head_threshold: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        HistogramConfig {
            bucket_width: DEFAULT_BUCKET_WIDTH,
            head_threshold: DEFAULT_HEAD_THRESHOLD,
        }
    }
}

/// Per-vertex distance statistics against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub p99: f64,
    pub max: f64,
    pub bucket_width: f64,
    /// `histogram[i]` counts distances in `[i * w, (i + 1) * w)`.
    pub histogram: Vec<usize>,
    pub head_threshold: f64,
    /// Distances below `head_threshold`.
    pub head: usize,
    pub tail: usize,
}

pub enum GroundTruth<'a> {
    Points(&'a [Point3<f64>]),
    Scene(&'a Scene),
}

/// Nearest-neighbour distances from `queries` to `points` (exact).
pub fn nearest_distances(queries: &[Point3<f64>], points: &[Point3<f64>]) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(Error::InvalidConfig(
            "ground-truth point cloud is empty".into(),
        ));
    }
    let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&coords)
        .map_err(|e| Error::InvalidConfig(format!("cannot index ground-truth cloud: {e:?}")))?;
    Ok(queries
        .par_iter()
        .map(|q| {
            let nn = tree
                .query(&[q.x, q.y, q.z])
                .nearest_one::<SquaredEuclidean<f64>>()
                .execute();
            nn.distance.sqrt()
        })
        .collect())
}

/// Vertex-to-ground-truth distances aggregated into a report.
pub fn cloud_distance(
    mesh: &TriangleMesh,
    gt: &GroundTruth,
    hist: &HistogramConfig,
) -> Result<AccuracyReport> {
    let vertices: Vec<Point3<f64>> = mesh.positions().collect();
    point_distance(&vertices, gt, hist)
}

pub fn point_distance(
    vertices: &[Point3<f64>],
    gt: &GroundTruth,
    hist: &HistogramConfig,
) -> Result<AccuracyReport> {
    if vertices.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let distances = match gt {
        GroundTruth::Points(points) => nearest_distances(vertices, points)?,
        GroundTruth::Scene(scene) => vertices
            .par_iter()
            .map(|v| scene.surface_distance(v))
            .collect(),
    };
    AccuracyReport::from_distances(&distances, hist)
}

impl AccuracyReport {
    pub fn from_distances(distances: &[f64], hist: &HistogramConfig) -> Result<Self> {
        if distances.is_empty() {
            return Err(Error::EmptyMesh);
        }
        if !(hist.bucket_width > 0.0) {
            return Err(Error::InvalidConfig(
                "histogram bucket width must be positive".into(),
            ));
        }
        let n = distances.len() as f64;
        let mean = distances.iter().sum::<f64>() / n;
        let var = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = distances.to_vec();
        sorted.sort_by(f64::total_cmp);
        let max = *sorted.last().unwrap();
        let buckets = (max / hist.bucket_width).floor() as usize + 1;
        let mut histogram = vec![0; buckets];
        for d in distances {
            histogram[((d / hist.bucket_width).floor() as usize).min(buckets - 1)] += 1;
        }
        let head = distances
            .iter()
            .filter(|d| **d < hist.head_threshold)
            .count();
        Ok(AccuracyReport {
            count: distances.len(),
            mean,
            std: var.sqrt(),
            p99: percentile(&sorted, 0.99),
            max,
            bucket_width: hist.bucket_width,
            histogram,
            head_threshold: hist.head_threshold,
            head,
            tail: distances.len() - head,
        })
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("lower,upper,count\n");
        for (i, c) in self.histogram.iter().enumerate() {
            let lo = i as f64 * self.bucket_width;
            writeln!(out, "{lo:.6},{:.6},{c}", lo + self.bucket_width).unwrap();
        }
        out
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Method / mean / std table.
pub fn accuracy_table(rows: &[(&str, &AccuracyReport)]) -> String {
    let mut out = format!(
        "{:<8} {:>10} {:>10} {:>10}\n",
        "METHOD", "MEAN", "STD", "P99"
    );
    for (name, r) in rows {
        writeln!(
            out,
            "{:<8} {:>10.6} {:>10.6} {:>10.6}",
            name, r.mean, r.std, r.p99
        )
        .unwrap();
    }
    out
}

/// One row per processed frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub frame: usize,
    pub timestamp: f64,
    pub new_blocks: usize,
    pub allocated_blocks: usize,
    pub voxels_updated: usize,
    pub mean_rho: Option<f64>,
    /// Whether extraction ran after this frame.
    pub meshed: bool,
    pub surfel_count: usize,
    pub vertex_count: usize,
    pub triangle_count: usize,
    pub mapping_ms: f64,
    pub meshing_ms: f64,
}

/// Per-frame counters; wall-clock columns are kept out so the file is reproducible.
pub fn stats_csv(frames: &[FrameStats]) -> String {
    let mut out = String::from(
        "frame,timestamp,new_blocks,allocated_blocks,voxels_updated,mean_rho,meshed,surfels,vertices,triangles\n",
    );
    for f in frames {
        let rho = f.mean_rho.map(|r| format!("{r:.9}")).unwrap_or_default();
        writeln!(
            out,
            "{},{:.6},{},{},{},{rho},{},{},{},{}",
            f.frame,
            f.timestamp,
            f.new_blocks,
            f.allocated_blocks,
            f.voxels_updated,
            u8::from(f.meshed),
            f.surfel_count,
            f.vertex_count,
            f.triangle_count
        )
        .unwrap();
    }
    out
}

pub fn timings_csv(frames: &[FrameStats]) -> String {
    let mut out = String::from("frame,mapping_ms,meshing_ms\n");
    for f in frames {
        writeln!(out, "{},{:.3},{:.3}", f.frame, f.mapping_ms, f.meshing_ms).unwrap();
    }
    out
}

/// Mesh vertex count after each frame, carrying the last extracted value
/// across frames that skipped extraction.
pub fn vertex_growth(frames: &[FrameStats]) -> Vec<(usize, usize)> {
    let mut last = 0;
    frames
        .iter()
        .map(|f| {
            if f.meshed {
                last = f.vertex_count;
            }
            (f.frame, last)
        })
        .collect()
}

pub fn vertex_growth_csv(frames: &[FrameStats]) -> String {
    let mut out = String::from("frame,vertices\n");
    for (frame, v) in vertex_growth(frames) {
        writeln!(out, "{frame},{v}").unwrap();
    }
    out
}

/// Whole-run memory and time summary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub frames: usize,
    pub vertex_count: usize,
    pub triangle_count: usize,
    pub peak_blocks: usize,
    pub mean_mapping_ms: f64,
    pub mean_meshing_ms: f64,
}

impl RunStats {
    pub fn from_frames(frames: &[FrameStats]) -> Self {
        let n = frames.len().max(1) as f64;
        let meshed: Vec<&FrameStats> = frames.iter().filter(|f| f.meshed).collect();
        let last = meshed.last();
        RunStats {
            frames: frames.len(),
            vertex_count: last.map_or(0, |f| f.vertex_count),
            triangle_count: last.map_or(0, |f| f.triangle_count),
            peak_blocks: frames.iter().map(|f| f.allocated_blocks).max().unwrap_or(0),
            mean_mapping_ms: frames.iter().map(|f| f.mapping_ms).sum::<f64>() / n,
            mean_meshing_ms: meshed.iter().map(|f| f.meshing_ms).sum::<f64>()
                / meshed.len().max(1) as f64,
        }
    }
}
