//! Frame loop wiring sensors, fusion, extraction and evaluation together.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::evaluation::{self, AccuracyReport, FrameStats, GroundTruth, HistogramConfig, RunStats};
use crate::extraction::{
    extract_all, extract_changed, ExtractionConfig, PlyFormat, PlyMesh, SurfaceField, TriangleMesh,
};
use crate::fusion::{fuse_frame, FusionConfig, FusionMode, NumericFloors, TruncationRule};
use crate::inlier::InlierConfig;
use crate::sensor::synthetic::{Scene, SyntheticSequence};
use crate::sensor::tum::load_tum_sequence;
use crate::sensor::{CameraIntrinsics, DepthFrame, NoiseModel};
use crate::volume_grid::{BlockGrid, VoxelPrior, DEFAULT_PRIOR_COUNT};
use crate::{Error, Result};

/// Run parameters. Fields left as `None` are derived from `voxel_size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub voxel_size: f64,
    /// Band is `truncation_scale * (voxel_size + tau)` per observation.
    pub truncation_scale: f64,
    pub pi_thr: f64,
    pub sigma_thr: Option<f64>,
    pub theta: Option<f64>,
    pub gamma: f64,
    pub alpha_max_deg: f64,
    pub w_angle_floor: f64,
    pub rho_prior: f64,
    pub mode: FusionMode,
    /// Extract every `mesh_every` frames (and always after the last one).
    pub mesh_every: usize,
    /// Overrides the seed stored in a synthetic sequence file.
    pub seed: Option<u64>,
    /// Pseudo-count of the symmetric Beta prior on new voxels.
    pub prior_count: f64,
    /// Depth at which the nominal band used for allocation and the prior
    /// sigma is evaluated.
    pub reference_depth: f64,
    pub noise: NoiseModel,
    pub floors: NumericFloors,
    pub histogram: HistogramConfig,
    /// Used for TUM sequences.
    pub intrinsics: CameraIntrinsics,
    pub binary_ply: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            voxel_size: 0.008,
            truncation_scale: 3.0,
            pi_thr: 0.4,
            sigma_thr: None,
            theta: None,
            gamma: 0.5,
            alpha_max_deg: 80.0,
            w_angle_floor: 0.1,
            rho_prior: 0.1,
            mode: FusionMode::Psdf,
            mesh_every: 1,
            seed: None,
            prior_count: DEFAULT_PRIOR_COUNT,
            reference_depth: 2.0,
            noise: NoiseModel::default(),
            floors: NumericFloors::default(),
            histogram: HistogramConfig::default(),
            intrinsics: CameraIntrinsics::tum_default(),
            binary_ply: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Parses a JSON document; unknown keys are rejected.
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn sigma_thr(&self) -> f64 {
        self.sigma_thr.unwrap_or(2.0 * self.voxel_size)
    }

    pub fn theta(&self) -> f64 {
        self.theta.unwrap_or(2.0 * self.voxel_size)
    }

    /// Copy with every derived field filled in.
    pub fn resolved(&self) -> Self {
        PipelineConfig {
            sigma_thr: Some(self.sigma_thr()),
            theta: Some(self.theta()),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("voxel_size", self.voxel_size),
            ("truncation_scale", self.truncation_scale),
            ("pi_thr", self.pi_thr),
            ("sigma_thr", self.sigma_thr()),
            ("theta", self.theta()),
            ("alpha_max_deg", self.alpha_max_deg),
            ("rho_prior", self.rho_prior),
            ("prior_count", self.prior_count),
            ("reference_depth", self.reference_depth),
            ("histogram.bucket_width", self.histogram.bucket_width),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.w_angle_floor) || self.rho_prior > 1.0 || self.pi_thr >= 1.0
        {
            return Err(Error::InvalidConfig(
                "weights and thresholds must lie in [0, 1]".into(),
            ));
        }
        if self.mesh_every == 0 {
            return Err(Error::InvalidConfig("mesh_every must be at least 1".into()));
        }
        let f = &self.floors;
        if !(f.sigma_min > 0.0 && f.count_min > 0.0 && f.count_max > f.count_min) {
            return Err(Error::InvalidConfig(format!(
                "invalid numeric floors {f:?}"
            )));
        }
        self.intrinsics.validate()
    }

    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            truncation: TruncationRule {
                scale: self.truncation_scale,
                voxel_size: self.voxel_size,
            },
            noise: self.noise,
            inlier: InlierConfig {
                theta: self.theta(),
                gamma: self.gamma,
                alpha_max_deg: self.alpha_max_deg,
                w_angle_floor: self.w_angle_floor,
                rho_prior: self.rho_prior,
            },
            floors: self.floors,
            mode: self.mode,
        }
    }

    pub fn extraction_config(&self) -> ExtractionConfig {
        ExtractionConfig {
            pi_thr: self.pi_thr,
            sigma_thr: self.sigma_thr(),
            field: match self.mode {
                FusionMode::Psdf => SurfaceField::Psdf,
                FusionMode::Tsdf => SurfaceField::Tsdf,
            },
        }
    }

    /// Nominal band at `reference_depth`.
    pub fn nominal_truncation(&self) -> f64 {
        self.fusion_config()
            .truncation
            .band(self.noise.axial(self.reference_depth))
    }

    pub fn new_grid(&self) -> Result<BlockGrid> {
        let t = self.nominal_truncation();
        BlockGrid::with_prior(
            self.voxel_size,
            t,
            VoxelPrior::symmetric(self.prior_count, t),
        )
    }
}

/// Incremental reconstruction state: feed frames, read back meshes.
pub struct Reconstructor {
    grid: BlockGrid,
    fusion: FusionConfig,
    extraction: ExtractionConfig,
    mesh_every: usize,
    stats: Vec<FrameStats>,
    mesh: TriangleMesh,
    dirty: bool,
}

impl Reconstructor {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Reconstructor {
            grid: cfg.new_grid()?,
            fusion: cfg.fusion_config(),
            extraction: cfg.extraction_config(),
            mesh_every: cfg.mesh_every,
            stats: Vec::new(),
            mesh: TriangleMesh::default(),
            dirty: false,
        })
    }

    pub fn grid(&self) -> &BlockGrid {
        &self.grid
    }

    pub fn grid_mut(&mut self) -> &mut BlockGrid {
        &mut self.grid
    }

    pub fn stats(&self) -> &[FrameStats] {
        &self.stats
    }

    pub fn extraction_config(&self) -> &ExtractionConfig {
        &self.extraction
    }

    /// Allocate, fuse and, per the cadence, extract. Inlier ratios are scored
    /// against the surfels of the most recent extraction.
    pub fn process(&mut self, frame: &DepthFrame) -> Result<&FrameStats> {
        frame.validate()?;
        let index = self.stats.len();
        let t0 = Instant::now();
        let new_blocks = self.grid.allocate_for_frame(frame)?;
        let fused = fuse_frame(&mut self.grid, frame, &self.fusion);
        let mapping_ms = t0.elapsed().as_secs_f64() * 1e3;
        self.dirty = true;
        let mut stats = FrameStats {
            frame: index,
            timestamp: frame.timestamp,
            new_blocks,
            allocated_blocks: self.grid.len(),
            voxels_updated: fused.voxels_updated,
            mean_rho: fused.mean_rho,
            mapping_ms,
            ..Default::default()
        };
        if (index + 1) % self.mesh_every == 0 {
            self.fill_mesh_stats(&mut stats);
        }
        self.stats.push(stats);
        Ok(self.stats.last().unwrap())
    }

    fn fill_mesh_stats(&mut self, stats: &mut FrameStats) {
        let t0 = Instant::now();
        let ex = extract_changed(&mut self.grid, &self.extraction);
        stats.meshing_ms = t0.elapsed().as_secs_f64() * 1e3;
        stats.meshed = true;
        stats.surfel_count = ex.surfel_count;
        stats.vertex_count = ex.mesh.vertex_count();
        stats.triangle_count = ex.mesh.triangle_count();
        self.mesh = ex.mesh;
        self.dirty = false;
    }

    /// Mesh reflecting every processed frame; extracts if frames were fused
    /// since the last extraction.
    pub fn finish(&mut self) -> &TriangleMesh {
        if self.dirty {
            if let Some(mut last) = self.stats.pop() {
                self.fill_mesh_stats(&mut last);
                self.stats.push(last);
            }
        }
        &self.mesh
    }

    /// Re-extracts with different thresholds without touching the fused field.
    pub fn extract_with(&mut self, cfg: &ExtractionConfig) -> crate::extraction::Extraction {
        self.extraction = *cfg;
        let ex = extract_all(&mut self.grid, cfg);
        self.mesh = ex.mesh.clone();
        self.dirty = false;
        ex
    }
}

/// Where frames come from.
#[derive(Debug, Clone)]
pub enum Source {
    /// Directory in TUM layout.
    Tum(PathBuf),
    /// JSON synthetic sequence description.
    Synthetic(PathBuf),
    /// In-memory synthetic sequence.
    Sequence(Box<SyntheticSequence>),
}

impl Source {
    /// Directories are read as TUM sequences, files as synthetic descriptions.
    pub fn from_path(path: &Path) -> Result<Self> {
        if path.is_dir() {
            Ok(Source::Tum(path.to_path_buf()))
        } else if path.is_file() {
            Ok(Source::Synthetic(path.to_path_buf()))
        } else {
            Err(Error::MissingFile {
                path: path.to_path_buf(),
            })
        }
    }
}

/// Ground truth for accuracy reports.
#[derive(Debug, Clone)]
pub enum Reference {
    Scene(Scene),
    Points(Vec<nalgebra::Point3<f64>>),
}

impl Reference {
    /// A synthetic sequence JSON yields its analytic scene; a PLY yields its vertices.
    pub fn from_path(path: &Path) -> Result<Self> {
        let is_ply = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("ply"));
        if is_ply {
            let ply = PlyMesh::read(path)?;
            if ply.positions.is_empty() {
                return Err(Error::Ply {
                    path: path.to_path_buf(),
                    reason: "no vertices".into(),
                });
            }
            Ok(Reference::Points(ply.positions))
        } else {
            Ok(Reference::Scene(SyntheticSequence::from_file(path)?.scene))
        }
    }

    pub fn evaluate(&self, mesh: &TriangleMesh, hist: &HistogramConfig) -> Result<AccuracyReport> {
        let gt = match self {
            Reference::Scene(s) => GroundTruth::Scene(s),
            Reference::Points(p) => GroundTruth::Points(p),
        };
        evaluation::cloud_distance(mesh, &gt, hist)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub mesh: TriangleMesh,
    pub frames: Vec<FrameStats>,
    pub summary: RunStats,
    pub accuracy: Option<AccuracyReport>,
    /// Frames dropped while reading the source (TUM association and parse failures).
    pub skipped: usize,
}

/// `intrinsics.json` in a TUM directory takes precedence over the configured camera.
pub fn tum_intrinsics(root: &Path, cfg: &PipelineConfig) -> Result<CameraIntrinsics> {
    let p = root.join(INTRINSICS_FILE);
    if !p.is_file() {
        return Ok(cfg.intrinsics);
    }
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: p, source })
}

pub const INTRINSICS_FILE: &str = "intrinsics.json";

/// Runs the whole sequence in memory. `reference` overrides the ground
/// truth implied by the source.
pub fn reconstruct(
    cfg: &PipelineConfig,
    source: &Source,
    reference: Option<&Reference>,
) -> Result<RunOutcome> {
    let mut rec = Reconstructor::new(cfg)?;
    let mut implied = None;
    let mut skipped = 0;
    let run_sequence = |seq: &SyntheticSequence, rec: &mut Reconstructor| -> Result<()> {
        let mut seq = seq.clone();
        if let Some(seed) = cfg.seed {
            seq.seed = seed;
        }
        seq.validate()?;
        for f in seq.frames() {
            rec.process(&f?.noisy)?;
        }
        Ok(())
    };
    match source {
        Source::Tum(root) => {
            let seq = load_tum_sequence(root, tum_intrinsics(root, cfg)?)?;
            skipped = seq.unmatched + seq.malformed;
            for f in seq.frames() {
                rec.process(&f?)?;
            }
        }
        Source::Synthetic(path) => {
            let seq = SyntheticSequence::from_file(path)?;
            run_sequence(&seq, &mut rec)?;
            implied = Some(Reference::Scene(seq.scene));
        }
        Source::Sequence(seq) => {
            run_sequence(seq, &mut rec)?;
            implied = Some(Reference::Scene(seq.scene.clone()));
        }
    }
    let mesh = rec.finish().clone();
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let accuracy = reference
        .or(implied.as_ref())
        .map(|r| r.evaluate(&mesh, &cfg.histogram))
        .transpose()?;
    let frames = rec.stats().to_vec();
    Ok(RunOutcome {
        summary: RunStats::from_frames(&frames),
        mesh,
        frames,
        accuracy,
        skipped,
    })
}

/// Reconstructs and writes `mesh.ply`, `stats.csv`, `timings.csv`,
/// `vertex_growth.csv`, `report.txt`, `resolved_config.json` and, with
/// ground truth, `histogram.csv` into `out_dir`.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    source: &Source,
    reference: Option<&Reference>,
    out_dir: &Path,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let outcome = reconstruct(cfg, source, reference)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: &str, text: &str| -> Result<()> {
        let p = out_dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    let format = if cfg.binary_ply {
        PlyFormat::BinaryLittleEndian
    } else {
        PlyFormat::Ascii
    };
    outcome.mesh.write_ply(&out_dir.join("mesh.ply"), format)?;
    write("stats.csv", &evaluation::stats_csv(&outcome.frames))?;
    write("timings.csv", &evaluation::timings_csv(&outcome.frames))?;
    write(
        "vertex_growth.csv",
        &evaluation::vertex_growth_csv(&outcome.frames),
    )?;
    write(
        "resolved_config.json",
        &(serde_json::to_string_pretty(&cfg.resolved()).expect("config serializes") + "\n"),
    )?;
    if let Some(acc) = &outcome.accuracy {
        write("histogram.csv", &acc.histogram_csv())?;
    }
    write("report.txt", &report_text(cfg.mode, &outcome))?;
    Ok(outcome)
}

pub fn report_text(mode: FusionMode, outcome: &RunOutcome) -> String {
    let s = &outcome.summary;
    let mut out = String::new();
    if let Some(acc) = &outcome.accuracy {
        out += &evaluation::accuracy_table(&[(&mode.to_string().to_uppercase(), acc)]);
        out += &format!(
            "max {:.6}  head(<{:.3}) {}  tail {}\n\n",
            acc.max, acc.head_threshold, acc.head, acc.tail
        );
    }
    out += &format!(
        "frames {}\nskipped {}\nvertices {}\ntriangles {}\npeak_blocks {}\nmapping_ms_per_frame {:.2}\nmeshing_ms_per_pass {:.2}\n",
        s.frames, outcome.skipped, s.vertex_count, s.triangle_count, s.peak_blocks, s.mean_mapping_ms, s.mean_meshing_ms
    );
    out
}

/// Paired PSDF / TSDF runs on one source.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub psdf: RunOutcome,
    pub tsdf: RunOutcome,
}

pub fn compare_modes(
    cfg: &PipelineConfig,
    source: &Source,
    reference: Option<&Reference>,
) -> Result<Comparison> {
    let run = |mode| {
        let c = PipelineConfig {
            mode,
            ..cfg.clone()
        };
        reconstruct(&c, source, reference)
    };
    Ok(Comparison {
        psdf: run(FusionMode::Psdf)?,
        tsdf: run(FusionMode::Tsdf)?,
    })
}

impl Comparison {
    pub fn table(&self) -> String {
        let mut out = String::new();
        if let (Some(p), Some(t)) = (&self.psdf.accuracy, &self.tsdf.accuracy) {
            out += &evaluation::accuracy_table(&[("PSDF", p), ("TSDF", t)]);
            out.push('\n');
        }
        out += &format!(
            "{:<8} {:>10} {:>10} {:>12} {:>12}\n",
            "METHOD", "VERTICES", "TRIANGLES", "MAPPING_MS", "MESHING_MS"
        );
        for (name, r) in [("PSDF", &self.psdf), ("TSDF", &self.tsdf)] {
            let s = &r.summary;
            out += &format!(
                "{:<8} {:>10} {:>10} {:>12.2} {:>12.2}\n",
                name, s.vertex_count, s.triangle_count, s.mean_mapping_ms, s.mean_meshing_ms
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_defaults() {
        let cfg = PipelineConfig {
            voxel_size: 0.01,
            ..Default::default()
        };
        let r = cfg.resolved();
        assert_eq!(r.sigma_thr, Some(0.02));
        assert_eq!(r.theta, Some(0.02));
        assert_eq!(cfg.extraction_config().sigma_thr, 0.02);
        assert_eq!(cfg.fusion_config().inlier.theta, 0.02);
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = PipelineConfig::default().resolved();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: PipelineConfig =
            serde_json::from_str(r#"{"voxel_size": 0.02, "mode": "tsdf"}"#).unwrap();
        assert_eq!(partial.mode, FusionMode::Tsdf);
        assert_eq!(partial.pi_thr, 0.4);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"voxel": 1}"#).is_err());
    }

    #[test]
    fn rejects_invalid() {
        for bad in [
            PipelineConfig {
                voxel_size: -1.0,
                ..Default::default()
            },
            PipelineConfig {
                mesh_every: 0,
                ..Default::default()
            },
            PipelineConfig {
                gamma: 1.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn missing_source_names_path() {
        let err = Source::from_path(Path::new("/definitely/not/here")).unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here"));
    }
}
