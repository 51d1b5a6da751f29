//! Spline versus voxel reconstruction of a smooth synthetic phantom.
//!
//! Both projectors reconstruct from the same measurements. By default the
//! measurements are exact line integrals of the analytic phantom plus seeded
//! Gaussian noise, so neither discretization generated its own data. With
//! `inverse_crime` the data are instead the spline projections of the
//! phantom's interpolating coefficients, a consistency check of the spline
//! pipeline rather than a comparison.

use std::fs;
use std::path::Path;

use anyhow::Result;
use rayon::prelude::*;
use serde::Serialize;
use splinesplat::bspline::{BasisSpec, CoefficientVolume, VoxelVolume, SUPPORT_HALF_WIDTH};
use splinesplat::contribnet::ContribNet;
use splinesplat::formats::{
    fit_coefficients, make_phantom, random_smooth_blobs, write_geometry, write_sinogram, write_volume,
    ValueKind,
};
use splinesplat::geometry::{GeometryDescriptor, ScanGeometry};
use splinesplat::raytrace::{ProjectorKind, SystemMatrix};
use splinesplat::recon::{
    add_noise, cgls_solve, psnr_to_reference, sample_on_lattice, IterationLog, ReconConfig,
    Reconstruction, Sinogram,
};
use splinesplat::Vec3;

use crate::manifest::Run;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareConfig {
    pub shape: [usize; 3],
    pub blobs: usize,
    pub views: usize,
    pub rows: usize,
    pub cols: usize,
    pub iterations: usize,
    pub noise_variance: f64,
    pub inverse_crime: bool,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            shape: [64, 64, 32],
            blobs: 8,
            views: 72,
            rows: 32,
            cols: 64,
            iterations: 50,
            noise_variance: 1e-3,
            inverse_crime: false,
        }
    }
}

/// Lattice box `[lo, hi]` of a centered volume, widened by the basis support.
pub fn support_box(shape: [usize; 3]) -> (Vec3, Vec3) {
    let origin = CoefficientVolume::centered_origin(shape);
    let lo = Vec3::from_fn(|i, _| origin[i] as f64 - SUPPORT_HALF_WIDTH);
    let hi = Vec3::from_fn(|i, _| (origin[i] + shape[i] as i64 - 1) as f64 + SUPPORT_HALF_WIDTH);
    (lo, hi)
}

/// Circular cone-beam scan around `e3` with source and detector three volume
/// diagonals from the center, and the smallest pitch that keeps the whole
/// volume in every view.
pub fn desk_geometry(shape: [usize; 3], views: usize, rows: usize, cols: usize) -> Result<GeometryDescriptor> {
    let (lo, hi) = support_box(shape);
    let distance = 3.0 * (hi - lo).norm();
    let extent = [0, 1, 2].map(|i| hi[i] - lo[i]);
    let mut desc = GeometryDescriptor::cone_beam(views, rows, cols, distance, distance, 1.0, extent)
        .with_rotation_axis([0.0, 0.0, 1.0]);
    desc.pixel_pitch = desc.covering_pitch(&lo, &hi)?;
    Ok(desc)
}

/// Cached system matrices of both projectors.
pub struct Operators {
    pub splinesplat: SystemMatrix,
    pub voxel: SystemMatrix,
}

impl Operators {
    pub fn build(geometry: &ScanGeometry, template: &CoefficientVolume, net: &ContribNet) -> Result<Self> {
        Ok(Self {
            splinesplat: SystemMatrix::splinesplat(geometry, template, net, &BasisSpec::quadratic())?,
            voxel: SystemMatrix::voxel(geometry, template),
        })
    }
}

/// Seed of the measurement noise of run `seed`; phantoms use `seed` itself.
pub fn noise_seed(seed: u64) -> u64 {
    seed.wrapping_add(0x9e37_79b9_7f4a_7c15)
}

pub struct SeedOutcome {
    pub seed: u64,
    pub reference: VoxelVolume,
    pub sinogram: Sinogram,
    pub splinesplat: Reconstruction,
    pub splinesplat_samples: VoxelVolume,
    pub voxel: Reconstruction,
    pub psnr_splinesplat: f64,
    pub psnr_voxel: f64,
}

impl SeedOutcome {
    pub fn gap(&self) -> f64 {
        self.psnr_splinesplat - self.psnr_voxel
    }
}

/// Runs one seed of the comparison; stage timings go to `run`.
pub fn run_seed(
    cfg: &CompareConfig,
    geometry: &ScanGeometry,
    ops: &Operators,
    seed: u64,
    run: &mut Run,
) -> Result<SeedOutcome> {
    let shape = cfg.shape;
    let origin = CoefficientVolume::centered_origin(shape);
    let spec = run.stage("phantom", || random_smooth_blobs(cfg.blobs, shape, origin, seed))?;
    let samples = make_phantom(&spec, shape, origin)?;
    fs::write(run.path("phantom.json"), serde_json::to_string_pretty(&spec)?)?;

    let (reference, mut values) = if cfg.inverse_crime {
        let coeffs = fit_coefficients(&samples);
        let y = run.stage("simulate", || {
            use splinesplat::raytrace::LinearOperator;
            ops.splinesplat.apply(coeffs.data())
        });
        (sample_on_lattice(&coeffs), y)
    } else {
        let y = run.stage("simulate", || {
            geometry.rays().par_iter().map(|r| spec.line_integral(r)).collect::<Vec<_>>()
        });
        (samples, y)
    };
    add_noise(&mut values, cfg.noise_variance, noise_seed(seed))?;
    let sinogram = Sinogram::new(values, geometry.digest());

    let template = CoefficientVolume::zeros_like_box(shape, origin);
    let recon = |kind: ProjectorKind, run: &mut Run| -> Result<Reconstruction> {
        let op = match kind {
            ProjectorKind::Splinesplat => &ops.splinesplat,
            ProjectorKind::Voxel => &ops.voxel,
        };
        let rc = ReconConfig {
            iterations: cfg.iterations,
            projector: kind,
            seed,
            noise_variance: cfg.noise_variance,
        };
        let name = match kind {
            ProjectorKind::Splinesplat => "cgls_splinesplat",
            ProjectorKind::Voxel => "cgls_voxel",
        };
        Ok(run.stage(name, || cgls_solve(op, geometry, &sinogram, &template, &rc))?)
    };
    let splinesplat = recon(ProjectorKind::Splinesplat, run)?;
    let voxel = recon(ProjectorKind::Voxel, run)?;
    let splinesplat_samples = sample_on_lattice(&splinesplat.coeffs);
    let psnr_splinesplat = psnr_to_reference(&reference, &splinesplat_samples)?;
    let psnr_voxel = psnr_to_reference(&reference, &voxel.coeffs)?;
    Ok(SeedOutcome {
        seed,
        reference,
        sinogram,
        splinesplat,
        splinesplat_samples,
        voxel,
        psnr_splinesplat,
        psnr_voxel,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub noise_seed: u64,
    pub psnr_splinesplat: f64,
    pub psnr_voxel: f64,
    pub gap_db: f64,
    pub final_objective_splinesplat: f64,
    pub final_objective_voxel: f64,
    pub max_objective_increase_splinesplat: f64,
    pub max_objective_increase_voxel: f64,
}

impl From<&SeedOutcome> for SeedSummary {
    fn from(o: &SeedOutcome) -> Self {
        let last = |log: &[IterationLog]| log.last().map_or(f64::NAN, |e| e.objective);
        Self {
            seed: o.seed,
            noise_seed: noise_seed(o.seed),
            psnr_splinesplat: o.psnr_splinesplat,
            psnr_voxel: o.psnr_voxel,
            gap_db: o.gap(),
            final_objective_splinesplat: last(&o.splinesplat.log),
            final_objective_voxel: last(&o.voxel.log),
            max_objective_increase_splinesplat: o.splinesplat.max_objective_increase(),
            max_objective_increase_voxel: o.voxel.max_objective_increase(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareSummary {
    pub config: CompareConfig,
    pub geometry_digest: String,
    pub pixel_pitch: f64,
    pub seeds: Vec<SeedSummary>,
    pub mean_gap_db: f64,
}

/// Central `k3` slice as CSV, one row per `k1`.
fn write_slice(path: &Path, vol: &VoxelVolume) -> Result<()> {
    let [n0, n1, n2] = vol.shape();
    let mut w = csv::Writer::from_path(path)?;
    for i in 0..n0 {
        let row: Vec<String> = (0..n1)
            .map(|j| format!("{:e}", vol.data()[(i * n1 + j) * n2 + n2 / 2]))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the artifacts of one seed into the directory of `run`.
pub fn write_seed(outcome: &SeedOutcome, geometry: &GeometryDescriptor, run: &Run) -> Result<()> {
    write_volume(run.path("reference.json"), &outcome.reference, ValueKind::Samples, None)?;
    write_sinogram(run.path("sinogram.json"), &outcome.sinogram, Some(geometry))?;
    let tag = BasisSpec::quadratic().tag();
    write_volume(
        run.path("recon_splinesplat.json"),
        &outcome.splinesplat.coeffs,
        ValueKind::Coefficients,
        Some(&tag),
    )?;
    write_volume(run.path("recon_voxel.json"), &outcome.voxel.coeffs, ValueKind::Samples, None)?;
    fs::write(run.path("residuals_splinesplat.csv"), outcome.splinesplat.log_csv())?;
    fs::write(run.path("residuals_voxel.csv"), outcome.voxel.log_csv())?;
    write_slice(&run.path("slice_reference.csv"), &outcome.reference)?;
    write_slice(&run.path("slice_splinesplat.csv"), &outcome.splinesplat_samples)?;
    write_slice(&run.path("slice_voxel.csv"), &outcome.voxel.coeffs)?;
    fs::write(
        run.path("summary.json"),
        serde_json::to_string_pretty(&SeedSummary::from(outcome))?,
    )?;
    Ok(())
}

/// Full comparison over `seeds`, one subdirectory `seed-<n>` with its own
/// manifest per seed. Returns the summary and the per-seed outcomes.
pub fn run_compare(
    cfg: &CompareConfig,
    seeds: &[u64],
    net: &ContribNet,
    run: &mut Run,
    flags: &impl Serialize,
) -> Result<(CompareSummary, Vec<SeedOutcome>)> {
    if seeds.is_empty() {
        anyhow::bail!(splinesplat::Error::Config("compare needs at least one seed".into()));
    }
    let desc = desk_geometry(cfg.shape, cfg.views, cfg.rows, cfg.cols)?;
    write_geometry(run.path("geometry.json"), &desc)?;
    let geometry = desc.build()?;
    let template = CoefficientVolume::zeros_like_box(cfg.shape, CoefficientVolume::centered_origin(cfg.shape));
    let ops = run.stage("system_matrices", || Operators::build(&geometry, &template, net))?;

    let mut outcomes = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        run.seed(&format!("seed-{seed}"), seed);
        let mut sub = Run::start("compare", flags, &run.path(&format!("seed-{seed}")))?;
        sub.seed("phantom", seed);
        sub.seed("noise", noise_seed(seed));
        let outcome = run_seed(cfg, &geometry, &ops, seed, &mut sub)?;
        write_seed(&outcome, &desc, &sub)?;
        sub.finish()?;
        outcomes.push(outcome);
    }

    let seeds: Vec<SeedSummary> = outcomes.iter().map(SeedSummary::from).collect();
    let mean_gap_db = seeds.iter().map(|s| s.gap_db).sum::<f64>() / seeds.len() as f64;
    let summary = CompareSummary {
        config: cfg.clone(),
        geometry_digest: desc.digest(),
        pixel_pitch: desc.pixel_pitch,
        seeds,
        mean_gap_db,
    };
    fs::write(run.path("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    let mut w = csv::Writer::from_path(run.path("summary.csv"))?;
    for s in &summary.seeds {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok((summary, outcomes))
}
