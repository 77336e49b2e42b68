use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use psdf::evaluation::{self, HistogramConfig};
use psdf::extraction::PlyMesh;
use psdf::fusion::FusionMode;
use psdf::pipeline::{self, PipelineConfig, Reference, Source, INTRINSICS_FILE};
use psdf::sensor::synthetic::{small_intrinsics, NoiseSettings, SyntheticSequence};
use psdf::sensor::tum::write_tum_sequence;
use psdf::{Error, Result};

#[derive(Parser)]
#[command(
    name = "psdf",
    version,
    about = "Probabilistic signed distance fusion and meshing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct a TUM-layout directory or a synthetic sequence file.
    Fuse {
        source: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Render a synthetic sequence to disk in TUM layout.
    Synth(SynthOpts),
    /// Compare an existing PLY against ground truth.
    Eval {
        mesh: PathBuf,
        /// Synthetic sequence JSON (analytic scene) or a PLY point cloud.
        #[arg(long)]
        ground_truth: PathBuf,
        /// Histogram bucket width in meters.
        #[arg(long, default_value_t = evaluation::DEFAULT_BUCKET_WIDTH)]
        bucket_width: f64,
        /// Directory for report.txt and histogram.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run PSDF and TSDF on the same source and print a comparison table.
    Bench {
        source: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
}

#[derive(Args)]
struct RunOpts {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ground truth (synthetic sequence JSON or PLY point cloud).
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    voxel_size: Option<f64>,
    #[arg(long)]
    trunc_scale: Option<f64>,
    #[arg(long)]
    pi_thr: Option<f64>,
    #[arg(long)]
    sigma_thr: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    mode: Option<FusionMode>,
    #[arg(long)]
    mesh_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl RunOpts {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_file(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.voxel_size {
            cfg.voxel_size = v;
        }
        if let Some(v) = self.trunc_scale {
            cfg.truncation_scale = v;
        }
        if let Some(v) = self.pi_thr {
            cfg.pi_thr = v;
        }
        if self.sigma_thr.is_some() {
            cfg.sigma_thr = self.sigma_thr;
        }
        if self.theta.is_some() {
            cfg.theta = self.theta;
        }
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
        if let Some(v) = self.mesh_every {
            cfg.mesh_every = v;
        }
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn reference(&self) -> Result<Option<Reference>> {
        self.ground_truth
            .as_deref()
            .map(Reference::from_path)
            .transpose()
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Room,
    Sphere,
    Wall,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseKind {
    None,
    Gaussian,
    Outliers,
}

#[derive(Args)]
struct SynthOpts {
    #[arg(long)]
    out: PathBuf,
    /// Sequence description; overrides --preset.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "room")]
    preset: Preset,
    #[arg(long, default_value_t = 60)]
    frames: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "gaussian")]
    noise: NoiseKind,
    #[arg(long, default_value_t = 0.2)]
    outlier_fraction: f64,
    #[arg(long, default_value_t = 0.3)]
    outlier_range: f64,
}

fn synth(opts: &SynthOpts) -> Result<()> {
    let mut seq = match &opts.scene {
        Some(p) => SyntheticSequence::from_file(p)?,
        None => {
            let noise = match opts.noise {
                NoiseKind::None => NoiseSettings::none(),
                NoiseKind::Gaussian => NoiseSettings::gaussian(),
                NoiseKind::Outliers => {
                    NoiseSettings::with_outliers(opts.outlier_fraction, opts.outlier_range)
                }
            };
            match opts.preset {
                Preset::Room => SyntheticSequence::room(opts.frames, noise, 0),
                Preset::Sphere => SyntheticSequence::sphere(opts.frames, noise, 0),
                Preset::Wall => {
                    SyntheticSequence::wall(1.0, opts.frames, noise, 0, small_intrinsics())
                }
            }
        }
    };
    if let Some(s) = opts.seed {
        seq.seed = s;
    }
    seq.validate()?;
    let frames = seq
        .frames()
        .map(|f| f.map(|f| f.noisy))
        .collect::<Result<Vec<_>>>()?;
    write_tum_sequence(&opts.out, &frames)?;
    write_text(&opts.out.join("scene.json"), &(seq.to_json() + "\n"))?;
    write_text(
        &opts.out.join(INTRINSICS_FILE),
        &(serde_json::to_string_pretty(&seq.intrinsics).expect("intrinsics serialize") + "\n"),
    )?;
    println!("wrote {} frames to {}", frames.len(), opts.out.display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fuse { source, opts } => {
            let cfg = opts.config()?;
            let src = Source::from_path(&source)?;
            let outcome =
                pipeline::run_pipeline(&cfg, &src, opts.reference()?.as_ref(), &opts.out)?;
            print!("{}", pipeline::report_text(cfg.mode, &outcome));
        }
        Command::Synth(opts) => synth(&opts)?,
        Command::Eval {
            mesh,
            ground_truth,
            bucket_width,
            out,
        } => {
            let ply = PlyMesh::read(&mesh)?;
            let reference = Reference::from_path(&ground_truth)?;
            let hist = HistogramConfig {
                bucket_width,
                ..Default::default()
            };
            let gt = match &reference {
                Reference::Scene(s) => evaluation::GroundTruth::Scene(s),
                Reference::Points(p) => evaluation::GroundTruth::Points(p),
            };
            let report = evaluation::point_distance(&ply.positions, &gt, &hist)?;
            let name = mesh
                .file_stem()
                .map_or("MESH".into(), |s| s.to_string_lossy().to_uppercase());
            let text = evaluation::accuracy_table(&[(&name, &report)]);
            print!("{text}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
                    path: dir.clone(),
                    source,
                })?;
                write_text(&dir.join("report.txt"), &text)?;
                write_text(&dir.join("histogram.csv"), &report.histogram_csv())?;
            }
        }
        Command::Bench { source, opts } => {
            let cfg = opts.config()?;
            let src = Source::from_path(&source)?;
            let cmp = pipeline::compare_modes(&cfg, &src, opts.reference()?.as_ref())?;
            std::fs::create_dir_all(&opts.out).map_err(|source| Error::Io {
                path: opts.out.clone(),
                source,
            })?;
            for (name, r) in [("psdf", &cmp.psdf), ("tsdf", &cmp.tsdf)] {
                r.mesh.write_ply(
                    &opts.out.join(format!("{name}_mesh.ply")),
                    psdf::extraction::PlyFormat::BinaryLittleEndian,
                )?;
                write_text(
                    &opts.out.join(format!("{name}_stats.csv")),
                    &evaluation::stats_csv(&r.frames),
                )?;
            }
            let table = cmp.table();
            write_text(&opts.out.join("comparison.txt"), &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
