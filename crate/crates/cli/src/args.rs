//! Command-line flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use splinesplat::contribnet::Activation;
use splinesplat::formats::PhantomKind;
use splinesplat::geometry::ScanKind;
use splinesplat::raytrace::ProjectorKind;

#[derive(Debug, Parser)]
#[command(name = "splinesplat", version, about = "Spline and voxel x-ray projection pipeline")]
pub struct Cli {
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, env = "SPLINESPLAT_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a contribution network against the quadrature oracle.
    TrainContributionNet(TrainArgs),
    /// Generate a synthetic phantom and its spline coefficients.
    Phantom(PhantomArgs),
    /// Write a scan geometry descriptor.
    MakeGeometry(GeometryArgs),
    /// Forward-project a volume.
    Project(ProjectArgs),
    /// Apply the adjoint of a projector to a sinogram.
    Backproject(BackprojectArgs),
    /// Least-squares reconstruction with CGLS.
    Reconstruct(ReconstructArgs),
    /// PSNR of a volume against a reference.
    Psnr(PsnrArgs),
    /// Time both projectors over the same rays.
    Benchmark(BenchmarkArgs),
    /// Spline versus voxel reconstruction of a smooth phantom.
    Compare(CompareArgs),
    /// Measure the footprint radius by sampling.
    Footprint(FootprintArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationArg {
    Tanh,
    AlgebraicSigmoid,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Tanh => Activation::Tanh,
            ActivationArg::AlgebraicSigmoid => Activation::AlgebraicSigmoid,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorArg {
    Splinesplat,
    Voxel,
}

impl From<ProjectorArg> for ProjectorKind {
    fn from(p: ProjectorArg) -> Self {
        match p {
            ProjectorArg::Splinesplat => ProjectorKind::Splinesplat,
            ProjectorArg::Voxel => ProjectorKind::Voxel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomArg {
    EllipsoidSet,
    SmoothBlobs,
}

impl From<PhantomArg> for PhantomKind {
    fn from(p: PhantomArg) -> Self {
        match p {
            PhantomArg::EllipsoidSet => PhantomKind::EllipsoidSet,
            PhantomArg::SmoothBlobs => PhantomKind::SmoothBlobs,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanArg {
    Cone,
    Parallel,
}

impl From<ScanArg> for ScanKind {
    fn from(s: ScanArg) -> Self {
        match s {
            ScanArg::Cone => ScanKind::ConeBeam,
            ScanArg::Parallel => ScanKind::ParallelBeam,
        }
    }
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got '{s}'"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| format!("cannot parse '{p}'"))?);
    }
    out.try_into().map_err(|_| unreachable!())
}

pub fn parse_shape(s: &str) -> Result<[usize; 3], String> {
    let shape = parse_triple::<usize>(s)?;
    if shape.contains(&0) {
        return Err(format!("shape entries must be positive, got '{s}'"));
    }
    Ok(shape)
}

pub fn parse_index(s: &str) -> Result<[i64; 3], String> {
    parse_triple(s)
}

pub fn parse_vector(s: &str) -> Result<[f64; 3], String> {
    parse_triple(s)
}

/// Contribution net to load; the shipped default when absent.
#[derive(Clone, Debug, Args, Serialize)]
pub struct NetArg {
    #[arg(long)]
    pub net: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Validation MSE at which training stops.
    #[arg(long, default_value_t = 1e-7)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 2e-3)]
    pub lr: f64,
    /// Learning rate at the last step of the cosine schedule.
    #[arg(long, default_value_t = 2e-6)]
    pub final_lr: f64,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "64,64,64")]
    pub hidden: Vec<usize>,
    #[arg(long, value_enum, default_value_t = ActivationArg::AlgebraicSigmoid)]
    pub activation: ActivationArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 600_000)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 10_000)]
    pub val_size: usize,
    #[arg(long, default_value_t = 100)]
    pub check_every: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct PhantomArgs {
    #[arg(long, value_enum, default_value_t = PhantomArg::SmoothBlobs)]
    pub kind: PhantomArg,
    #[arg(long, value_parser = parse_shape, default_value = "64,64,32")]
    pub shape: [usize; 3],
    /// Number of primitives.
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct GeometryArgs {
    #[arg(long, value_enum, default_value_t = ScanArg::Cone)]
    pub kind: ScanArg,
    #[arg(long, default_value_t = 72)]
    pub views: usize,
    #[arg(long, default_value_t = 32)]
    pub rows: usize,
    #[arg(long, default_value_t = 64)]
    pub cols: usize,
    /// Volume shape the geometry is sized for.
    #[arg(long, value_parser = parse_shape, default_value = "64,64,32")]
    pub shape: [usize; 3],
    /// Source to rotation center; three volume diagonals when absent.
    #[arg(long)]
    pub source_distance: Option<f64>,
    /// Rotation center to detector; equal to the source distance when absent.
    #[arg(long)]
    pub detector_distance: Option<f64>,
    /// Detector pixel pitch; the smallest pitch covering the volume when absent.
    #[arg(long)]
    pub pitch: Option<f64>,
    #[arg(long, value_parser = parse_vector, default_value = "0,0,1")]
    pub axis: [f64; 3],
    /// Angular range in radians; a full turn for cone beam, half for parallel.
    #[arg(long)]
    pub angular_range: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct ProjectArgs {
    #[arg(long)]
    pub volume: PathBuf,
    #[arg(long)]
    pub geometry: PathBuf,
    #[arg(long, value_enum, default_value_t = ProjectorArg::Splinesplat)]
    pub projector: ProjectorArg,
    #[command(flatten)]
    pub net: NetArg,
    #[arg(long, default_value_t = 0.0)]
    pub noise_variance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct BackprojectArgs {
    #[arg(long)]
    pub sinogram: PathBuf,
    /// Geometry file; the descriptor stored in the sinogram when absent.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ProjectorArg::Splinesplat)]
    pub projector: ProjectorArg,
    #[command(flatten)]
    pub net: NetArg,
    #[arg(long, value_parser = parse_shape)]
    pub shape: [usize; 3],
    /// Lattice index of the first coefficient; centered when absent.
    #[arg(long, value_parser = parse_index, allow_hyphen_values = true)]
    pub origin: Option<[i64; 3]>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub sinogram: PathBuf,
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ProjectorArg::Splinesplat)]
    pub projector: ProjectorArg,
    #[command(flatten)]
    pub net: NetArg,
    #[arg(long, value_parser = parse_shape)]
    pub shape: [usize; 3],
    #[arg(long, value_parser = parse_index, allow_hyphen_values = true)]
    pub origin: Option<[i64; 3]>,
    #[arg(long, default_value_t = 50)]
    pub iterations: usize,
    /// Seed of the adjoint pre-flight test.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Apply the projector on the fly instead of caching its matrix.
    #[arg(long)]
    pub on_the_fly: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct PsnrArgs {
    /// Reference samples.
    #[arg(long)]
    pub reference: PathBuf,
    /// Test volume; coefficient volumes are sampled on the reference lattice.
    #[arg(long)]
    pub test: PathBuf,
    /// Peak value; the reference maximum when absent.
    #[arg(long)]
    pub peak: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct BenchmarkArgs {
    /// Volume to project; a random smooth phantom of `--shape` when absent.
    #[arg(long)]
    pub volume: Option<PathBuf>,
    /// Geometry file; the default cone-beam geometry for the volume when absent.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    #[command(flatten)]
    pub net: NetArg,
    #[arg(long, value_parser = parse_shape, default_value = "64,64,32")]
    pub shape: [usize; 3],
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct CompareArgs {
    #[arg(long, value_parser = parse_shape, default_value = "64,64,32")]
    pub shape: [usize; 3],
    #[arg(long, default_value_t = 8)]
    pub blobs: usize,
    #[arg(long, default_value_t = 72)]
    pub views: usize,
    #[arg(long, default_value_t = 32)]
    pub rows: usize,
    #[arg(long, default_value_t = 64)]
    pub cols: usize,
    #[arg(long, default_value_t = 50)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub noise_variance: f64,
    /// One run per seed; each seed draws its phantom and its noise.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Simulate noise-free data with the spline model itself.
    #[arg(long)]
    pub inverse_crime: bool,
    #[command(flatten)]
    pub net: NetArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct FootprintArgs {
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}
