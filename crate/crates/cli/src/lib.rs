//! Command-line pipeline: training, simulation, reconstruction, benchmarks
//! and the spline/voxel comparison. Each subcommand writes its artifacts and
//! a `manifest.json` into its `--out` directory.

pub mod args;
pub mod commands;
pub mod compare;
pub mod manifest;

use anyhow::Result;

use args::{Cli, Command};

/// Runs one parsed command line on a pool of `cli.threads` workers.
pub fn run(cli: &Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build()?;
    pool.install(|| match &cli.command {
        Command::TrainContributionNet(a) => commands::train(a),
        Command::Phantom(a) => commands::phantom(a),
        Command::MakeGeometry(a) => commands::make_geometry(a),
        Command::Project(a) => commands::project(a),
        Command::Backproject(a) => commands::backproject(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Psnr(a) => commands::psnr_cmd(a),
        Command::Benchmark(a) => commands::benchmark(a).map(drop),
        Command::Compare(a) => commands::compare_cmd(a).map(drop),
        Command::Footprint(a) => commands::footprint_cmd(a),
    })
}

/// Short diagnostic category and exit code of a failure.
pub fn error_category(err: &anyhow::Error) -> (&'static str, i32) {
    use splinesplat::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) | E::Training(_) => ("config", 2),
                E::Shape(_) => ("shape", 3),
                E::Geometry(_) => ("geometry", 3),
                E::Primitive(_) => ("phantom", 3),
                E::Format(_) | E::Json(_) => ("format", 4),
                E::DigestMismatch { .. } => ("digest-mismatch", 5),
                E::AdjointMismatch(_) => ("adjoint-mismatch", 6),
                E::NonFinite { .. } => ("non-finite", 6),
                E::Io(_) => ("io", 7),
            };
        }
        if cause.is::<std::io::Error>() {
            return ("io", 7);
        }
        if cause.is::<serde_json::Error>() || cause.is::<csv::Error>() {
            return ("format", 4);
        }
    }
    ("internal", 1)
}
