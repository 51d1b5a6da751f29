//! One function per subcommand.

use std::fs;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use splinesplat::bspline::{
    exact_project, footprint, BasisSpec, CoefficientVolume, VoxelVolume, FOOTPRINT_RADIUS,
};
use splinesplat::contribnet::{train_with_progress, ContribNet, TrainConfig};
use splinesplat::formats::{
    fit_coefficients, make_phantom, random_smooth_blobs, read_sinogram, read_volume, write_geometry,
    write_sinogram, write_volume, PhantomKind, PhantomSpec, Primitive, ValueKind, VolumeFile,
};
use splinesplat::geometry::{GeometryDescriptor, Ray, ScanGeometry};
use splinesplat::raytrace::{
    splinesplat_backproject, splinesplat_project_all, traversal_stats, voxel_backproject,
    voxel_project_all, LinearOperator, Projector, ProjectorKind, SystemMatrix,
};
use splinesplat::recon::{
    add_noise, cgls_solve, psnr, sample_on_lattice, sample_volume, ReconConfig, Sinogram,
};
use splinesplat::{Error, Vec3};

use crate::args::*;
use crate::compare::{self, CompareConfig};
use crate::manifest::Run;

fn load_net(arg: &NetArg, run: &mut Run) -> Result<ContribNet> {
    match &arg.net {
        Some(path) => {
            run.input(path)?;
            Ok(ContribNet::load(path).with_context(|| format!("cannot load {}", path.display()))?)
        }
        None => Ok(ContribNet::default_trained()),
    }
}

fn load_volume(path: &std::path::Path, run: &mut Run) -> Result<VolumeFile> {
    run.input_with_data(path)?;
    Ok(read_volume(path).with_context(|| format!("cannot read volume {}", path.display()))?)
}

fn load_geometry(path: &std::path::Path, run: &mut Run) -> Result<(GeometryDescriptor, ScanGeometry)> {
    run.input(path)?;
    let desc: GeometryDescriptor = serde_json::from_slice(&fs::read(path)?)
        .with_context(|| format!("cannot parse geometry {}", path.display()))?;
    let geometry = desc.build()?;
    Ok((desc, geometry))
}

/// Sinogram plus the geometry given explicitly or stored with it.
fn load_measurements(
    sinogram: &std::path::Path,
    geometry: Option<&std::path::Path>,
    run: &mut Run,
) -> Result<(Sinogram, GeometryDescriptor, ScanGeometry)> {
    run.input_with_data(sinogram)?;
    let (sino, stored) = read_sinogram(sinogram)?;
    let (desc, geom) = match (geometry, stored) {
        (Some(path), _) => load_geometry(path, run)?,
        (None, Some(desc)) => {
            let geom = desc.build()?;
            (desc, geom)
        }
        (None, None) => bail!(Error::Config(format!(
            "{} stores no geometry; pass --geometry",
            sinogram.display()
        ))),
    };
    Ok((sino, desc, geom))
}

fn template(shape: [usize; 3], origin: Option<[i64; 3]>) -> CoefficientVolume {
    CoefficientVolume::zeros_like_box(shape, origin.unwrap_or(CoefficientVolume::centered_origin(shape)))
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut run = Run::start("train-contribution-net", args, &args.out)?;
    run.seed("train", args.seed);
    if args.hidden.is_empty() || args.hidden.contains(&0) {
        bail!(Error::Config(format!("invalid hidden layer widths {:?}", args.hidden)));
    }
    let cfg = TrainConfig {
        batch_size: args.batch,
        learning_rate: args.lr,
        final_learning_rate: args.final_lr,
        epsilon: args.epsilon,
        val_size: args.val_size,
        max_steps: args.max_steps,
        seed: args.seed,
        check_every: args.check_every,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let basis = BasisSpec::quadratic();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let net = ContribNet::random(&args.hidden, args.activation.into(), &basis, &mut rng)?;
    let start = Instant::now();
    let mut last_report = 0.0;
    let (net, report) = run.stage("train", || {
        let oracle = |omega: &Vec3, s: &Vec3| exact_project(&Ray { omega: *omega, s: *s }, &Vec3::zeros());
        train_with_progress(net, &cfg, oracle, |step, mse, max| {
            let t = start.elapsed().as_secs_f64();
            if t - last_report >= 10.0 {
                last_report = t;
                eprintln!("step {step:>9}  {t:8.1}s  rmse {:.3e}  max {max:.3e}", mse.sqrt());
            }
        })
    })?;
    net.save(run.path("contribnet.ssnet"))?;
    fs::write(run.path("train_report.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "steps {} converged {} rmse {:.3e} max {:.3e}",
        report.steps,
        report.converged,
        report.final_val_mse.sqrt(),
        report.max_abs_val_error
    );
    run.finish()?;
    Ok(())
}

/// `count` random ellipsoids of amplitude 0.2 to 0.6 inside the box.
fn random_ellipsoids(count: usize, shape: [usize; 3], origin: [i64; 3], seed: u64) -> Result<PhantomSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_extent = shape.iter().copied().min().unwrap_or(0) as f64;
    let primitives = (0..count)
        .map(|_| {
            let semi_axes = [0, 1, 2].map(|_| rng.random_range(0.1..0.3) * min_extent);
            let center = [0, 1, 2].map(|i| {
                let lo = origin[i] as f64;
                let hi = lo + shape[i] as f64 - 1.0;
                let margin = 0.3 * (hi - lo);
                rng.random_range(lo + margin..=hi - margin)
            });
            let orientation = [0, 1, 2].map(|_| rng.random_range(0.0..std::f64::consts::PI));
            Primitive {
                center,
                semi_axes,
                orientation,
                amplitude: rng.random_range(0.2..0.6),
            }
        })
        .collect();
    Ok(PhantomSpec::new(PhantomKind::EllipsoidSet, primitives)?)
}

pub fn phantom(args: &PhantomArgs) -> Result<()> {
    let mut run = Run::start("phantom", args, &args.out)?;
    run.seed("phantom", args.seed);
    let origin = CoefficientVolume::centered_origin(args.shape);
    let spec = match args.kind {
        PhantomArg::SmoothBlobs => random_smooth_blobs(args.count, args.shape, origin, args.seed)?,
        PhantomArg::EllipsoidSet => random_ellipsoids(args.count, args.shape, origin, args.seed)?,
    };
    let samples = run.stage("sample", || make_phantom(&spec, args.shape, origin))?;
    let coeffs = run.stage("fit", || fit_coefficients(&samples));
    fs::write(run.path("phantom.json"), serde_json::to_string_pretty(&spec)?)?;
    write_volume(run.path("samples.json"), &samples, ValueKind::Samples, None)?;
    write_volume(
        run.path("coefficients.json"),
        &coeffs,
        ValueKind::Coefficients,
        Some(&BasisSpec::quadratic().tag()),
    )?;
    run.finish()?;
    Ok(())
}

pub fn make_geometry(args: &GeometryArgs) -> Result<()> {
    let run = Run::start("make-geometry", args, &args.out)?;
    let (lo, hi) = compare::support_box(args.shape);
    let extent = [0, 1, 2].map(|i| hi[i] - lo[i]);
    let mut desc = match args.kind {
        ScanArg::Cone => {
            let sd = args.source_distance.unwrap_or(3.0 * (hi - lo).norm());
            let dd = args.detector_distance.unwrap_or(sd);
            GeometryDescriptor::cone_beam(args.views, args.rows, args.cols, sd, dd, 1.0, extent)
        }
        ScanArg::Parallel => GeometryDescriptor::parallel_beam(args.views, args.rows, args.cols, 1.0),
    }
    .with_rotation_axis(args.axis);
    if let Some(range) = args.angular_range {
        desc = desc.with_angular_range(range);
    }
    desc.pixel_pitch = match args.pitch {
        Some(p) => p,
        None => desc.covering_pitch(&lo, &hi)?,
    };
    desc.build()?;
    write_geometry(run.path("geometry.json"), &desc)?;
    run.finish()?;
    Ok(())
}

fn check_kind(kind: ProjectorKind, file: &VolumeFile) -> Result<()> {
    if kind == ProjectorKind::Splinesplat && file.value_kind != ValueKind::Coefficients {
        bail!(Error::Config(
            "the spline projector needs a coefficient volume (see `phantom`, coefficients.json)".into()
        ));
    }
    Ok(())
}

pub fn project(args: &ProjectArgs) -> Result<()> {
    let mut run = Run::start("project", args, &args.out)?;
    run.seed("noise", args.seed);
    let kind: ProjectorKind = args.projector.into();
    let file = load_volume(&args.volume, &mut run)?;
    check_kind(kind, &file)?;
    let (desc, geometry) = load_geometry(&args.geometry, &mut run)?;
    let mut sino = match kind {
        ProjectorKind::Splinesplat => {
            let net = load_net(&args.net, &mut run)?;
            run.stage("project", || {
                splinesplat_project_all(&file.volume, &geometry, &net, &BasisSpec::quadratic())
            })?
        }
        ProjectorKind::Voxel => run.stage("project", || voxel_project_all(&file.volume, &geometry))?,
    };
    add_noise(sino.values_mut(), args.noise_variance, args.seed)?;
    write_sinogram(run.path("sinogram.json"), &sino, Some(&desc))?;
    run.finish()?;
    Ok(())
}

pub fn backproject(args: &BackprojectArgs) -> Result<()> {
    let mut run = Run::start("backproject", args, &args.out)?;
    let (sino, _, geometry) = load_measurements(&args.sinogram, args.geometry.as_deref(), &mut run)?;
    sino.check_geometry(&geometry)?;
    let template = template(args.shape, args.origin);
    let (vol, kind) = match ProjectorKind::from(args.projector) {
        ProjectorKind::Splinesplat => {
            let net = load_net(&args.net, &mut run)?;
            let basis = BasisSpec::quadratic();
            let vol = run.stage("backproject", || {
                splinesplat_backproject(&sino, &geometry, &net, &basis, &template)
            })?;
            (vol, ValueKind::Coefficients)
        }
        ProjectorKind::Voxel => (
            run.stage("backproject", || voxel_backproject(&sino, &geometry, &template))?,
            ValueKind::Samples,
        ),
    };
    write_volume(run.path("backprojection.json"), &vol, kind, None)?;
    run.finish()?;
    Ok(())
}

pub fn reconstruct(args: &ReconstructArgs) -> Result<()> {
    let mut run = Run::start("reconstruct", args, &args.out)?;
    run.seed("preflight", args.seed);
    let (sino, _, geometry) = load_measurements(&args.sinogram, args.geometry.as_deref(), &mut run)?;
    sino.check_geometry(&geometry)?;
    let template = template(args.shape, args.origin);
    let kind: ProjectorKind = args.projector.into();
    let net = match kind {
        ProjectorKind::Splinesplat => Some(load_net(&args.net, &mut run)?),
        ProjectorKind::Voxel => None,
    };
    let basis = BasisSpec::quadratic();
    let op: Box<dyn LinearOperator + '_> = match (&net, args.on_the_fly) {
        (Some(net), true) => Box::new(Projector::splinesplat(&geometry, &template, net, &basis)?),
        (Some(net), false) => Box::new(run.stage("system_matrix", || {
            SystemMatrix::splinesplat(&geometry, &template, net, &basis)
        })?),
        (None, true) => Box::new(Projector::voxel(&geometry, &template)),
        (None, false) => Box::new(run.stage("system_matrix", || SystemMatrix::voxel(&geometry, &template))),
    };
    let cfg = ReconConfig {
        iterations: args.iterations,
        projector: kind,
        seed: args.seed,
        noise_variance: 0.0,
    };
    let recon = run.stage("cgls", || cgls_solve(op.as_ref(), &geometry, &sino, &template, &cfg))?;
    fs::write(run.path("residuals.csv"), recon.log_csv())?;
    match kind {
        ProjectorKind::Splinesplat => {
            write_volume(
                run.path("recon.json"),
                &recon.coeffs,
                ValueKind::Coefficients,
                Some(&basis.tag()),
            )?;
            write_volume(run.path("samples.json"), &sample_on_lattice(&recon.coeffs), ValueKind::Samples, None)?;
        }
        ProjectorKind::Voxel => {
            write_volume(run.path("recon.json"), &recon.coeffs, ValueKind::Samples, None)?;
        }
    }
    if let Some(last) = recon.log.last() {
        println!("iterations {} objective {:.6e}", last.iteration, last.objective);
    }
    run.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct PsnrReport {
    psnr_db: f64,
    peak: f64,
    test_value_kind: ValueKind,
}

pub fn psnr_cmd(args: &PsnrArgs) -> Result<()> {
    let mut run = Run::start("psnr", args, &args.out)?;
    let reference = load_volume(&args.reference, &mut run)?;
    let test = load_volume(&args.test, &mut run)?;
    let r = &reference.volume;
    let samples: VoxelVolume = match test.value_kind {
        ValueKind::Coefficients => sample_volume(&test.volume, r.shape(), r.origin()),
        ValueKind::Samples => test.volume.clone(),
    };
    if !samples.same_box(r) {
        bail!(Error::Shape(format!(
            "test volume {:?}@{:?} does not match reference {:?}@{:?}",
            samples.shape(),
            samples.origin(),
            r.shape(),
            r.origin()
        )));
    }
    let peak = args
        .peak
        .unwrap_or_else(|| r.data().iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let value = psnr(r.data(), samples.data(), peak)?;
    let report = PsnrReport {
        psnr_db: value,
        peak,
        test_value_kind: test.value_kind,
    };
    fs::write(run.path("psnr.json"), serde_json::to_string_pretty(&report)?)?;
    println!("{value:.4}");
    run.finish()?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct BenchmarkRow {
    pub projector: &'static str,
    pub operation: &'static str,
    pub reps: usize,
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub rays_per_s: f64,
    pub mean_planes_per_ray: f64,
    pub mean_candidates_per_ray: f64,
    pub mean_evaluations_per_ray: f64,
    /// Every ray evaluated at most 81 basis functions per plane crossed.
    pub evaluation_bound_holds: bool,
}

fn time_reps(warmup: usize, reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    for _ in 0..warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(times)
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<Vec<BenchmarkRow>> {
    let mut run = Run::start("benchmark", args, &args.out)?;
    run.seed("phantom", args.seed);
    if args.reps < 5 {
        bail!(Error::Config(format!("--reps must be >= 5, got {}", args.reps)));
    }
    let vol = match &args.volume {
        Some(path) => load_volume(path, &mut run)?.volume,
        None => {
            let origin = CoefficientVolume::centered_origin(args.shape);
            let spec = random_smooth_blobs(8, args.shape, origin, args.seed)?;
            fit_coefficients(&make_phantom(&spec, args.shape, origin)?)
        }
    };
    let geometry = match &args.geometry {
        Some(path) => load_geometry(path, &mut run)?.1,
        None => compare::desk_geometry(vol.shape(), 72, 32, 64)?.build()?,
    };
    let net = load_net(&args.net, &mut run)?;
    let basis = BasisSpec::quadratic();
    let template = CoefficientVolume::zeros_like(&vol);
    let sino = voxel_project_all(&vol, &geometry)?;

    let stats: Vec<_> = geometry.rays().par_iter().map(|r| traversal_stats(&vol, r, &basis)).collect();
    let n = stats.len().max(1) as f64;
    let mean = |f: fn(&splinesplat::raytrace::TraversalStats) -> usize| {
        stats.iter().map(|s| f(s) as f64).sum::<f64>() / n
    };
    let planes = mean(|s| s.planes);
    let candidates = mean(|s| s.candidates);
    let evaluations = mean(|s| s.evaluations);
    let bound = stats.iter().all(|s| s.evaluations <= 81 * s.planes);

    let mut rows = Vec::new();
    let mut push = |projector, operation, times: Vec<f64>, spline: bool| {
        let median = times[times.len() / 2];
        rows.push(BenchmarkRow {
            projector,
            operation,
            reps: times.len(),
            median_s: median,
            min_s: times[0],
            max_s: times[times.len() - 1],
            rays_per_s: geometry.num_rays() as f64 / median,
            mean_planes_per_ray: planes,
            mean_candidates_per_ray: if spline { candidates } else { 0.0 },
            mean_evaluations_per_ray: if spline { evaluations } else { 0.0 },
            evaluation_bound_holds: !spline || bound,
        });
    };
    let (w, r) = (args.warmup, args.reps);
    let t = run.stage("voxel_forward", || {
        time_reps(w, r, || voxel_project_all(&vol, &geometry).map(drop).map_err(Into::into))
    })?;
    push("voxel", "forward", t, false);
    let t = run.stage("splinesplat_forward", || {
        time_reps(w, r, || {
            splinesplat_project_all(&vol, &geometry, &net, &basis).map(drop).map_err(Into::into)
        })
    })?;
    push("splinesplat", "forward", t, true);
    let t = run.stage("voxel_adjoint", || {
        time_reps(w, r, || voxel_backproject(&sino, &geometry, &template).map(drop).map_err(Into::into))
    })?;
    push("voxel", "adjoint", t, false);
    let t = run.stage("splinesplat_adjoint", || {
        time_reps(w, r, || {
            splinesplat_backproject(&sino, &geometry, &net, &basis, &template)
                .map(drop)
                .map_err(Into::into)
        })
    })?;
    push("splinesplat", "adjoint", t, true);

    let mut out = csv::Writer::from_path(run.path("benchmark.csv"))?;
    for row in &rows {
        out.serialize(row)?;
        println!(
            "{:<12} {:<8} median {:.4}s  {:.3e} rays/s",
            row.projector, row.operation, row.median_s, row.rays_per_s
        );
    }
    out.flush()?;
    run.finish()?;
    Ok(rows)
}

pub fn compare_cmd(args: &CompareArgs) -> Result<compare::CompareSummary> {
    let mut run = Run::start("compare", args, &args.out)?;
    let net = load_net(&args.net, &mut run)?;
    let cfg = CompareConfig {
        shape: args.shape,
        blobs: args.blobs,
        views: args.views,
        rows: args.rows,
        cols: args.cols,
        iterations: args.iterations,
        noise_variance: args.noise_variance,
        inverse_crime: args.inverse_crime,
    };
    let (summary, _) = compare::run_compare(&cfg, &args.seeds, &net, &mut run, args)?;
    for s in &summary.seeds {
        println!(
            "seed {:>4}  splinesplat {:7.3} dB  voxel {:7.3} dB  gap {:+.3} dB",
            s.seed, s.psnr_splinesplat, s.psnr_voxel, s.gap_db
        );
    }
    run.finish()?;
    Ok(summary)
}

#[derive(Serialize)]
struct FootprintReport {
    samples: usize,
    per_axis: [f64; 3],
    supremum: f64,
    rounded_up: f64,
    shipped_radius: f64,
    neighbor_radius: i64,
}

pub fn footprint_cmd(args: &FootprintArgs) -> Result<()> {
    let mut run = Run::start("footprint", args, &args.out)?;
    run.seed("footprint", args.seed);
    let m = run.stage("measure", || footprint::measure(args.samples, args.seed));
    let report = FootprintReport {
        samples: m.samples,
        per_axis: m.per_axis,
        supremum: m.supremum,
        rounded_up: m.rounded_up(),
        shipped_radius: FOOTPRINT_RADIUS,
        neighbor_radius: BasisSpec::quadratic().neighbor_radius(),
    };
    fs::write(run.path("footprint.json"), serde_json::to_string_pretty(&report)?)?;
    println!("supremum {:.7} rounded {:.4}", report.supremum, report.rounded_up);
    run.finish()?;
    Ok(())
}
