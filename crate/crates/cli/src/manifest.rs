//! Per-run manifest: flags, seeds, input/output digests and stage timings.
//!
//! Every subcommand writes `manifest.json` into its output directory. Output
//! digests exclude manifests, which hold timings, so two runs with equal
//! inputs can be compared by their `outputs` maps alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use splinesplat::formats::file_digest;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub flags: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Input path to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the output directory to SHA-256. Manifests
    /// of nested runs are not listed.
    pub outputs: BTreeMap<String, String>,
    /// `(stage, seconds)` in execution order.
    pub timings: Vec<(String, f64)>,
    pub threads: usize,
    pub library_version: String,
}

/// Collects manifest entries while a subcommand runs.
pub struct Run {
    out_dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    /// Creates the output directory and starts a manifest.
    pub fn start(subcommand: &str, flags: &impl Serialize, out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir)
            .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            manifest: RunManifest {
                subcommand: subcommand.to_string(),
                flags: serde_json::to_value(flags)?,
                seeds: BTreeMap::new(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                timings: Vec::new(),
                threads: rayon::current_num_threads(),
                library_version: env!("CARGO_PKG_VERSION").to_string(),
            },
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Path of an output file inside the output directory.
    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seeds.insert(name.to_string(), value);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = file_digest(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.manifest.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Records a file-backed input together with its raw data block.
    pub fn input_with_data(&mut self, path: &Path) -> Result<()> {
        self.input(path)?;
        self.input(&splinesplat::formats::data_path(path))
    }

    /// Times `f` as stage `name`.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.manifest.timings.push((name.to_string(), t.elapsed().as_secs_f64()));
        out
    }

    /// Digests every file below the output directory and writes the
    /// manifest.
    pub fn finish(mut self) -> Result<RunManifest> {
        let mut files = Vec::new();
        collect_files(&self.out_dir, &mut files)?;
        for path in files {
            let rel = path.strip_prefix(&self.out_dir)?;
            let name = rel.to_string_lossy().replace('\\', "/");
            self.manifest.outputs.insert(name, file_digest(&path)?);
        }
        fs::write(
            self.out_dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&self.manifest)?,
        )?;
        Ok(self.manifest)
    }
}

/// Files below `dir` other than manifests, in sorted order.
fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if e.file_type()?.is_dir() {
            collect_files(&path, out)?;
        } else if e.file_name() != MANIFEST_FILE {
            out.push(path);
        }
    }
    Ok(())
}
