//! Volume and sinogram files, synthetic phantoms and spline interpolation.
//!
//! Every file is a JSON sidecar next to a raw block of little-endian `f32`
//! values. The sidecar names the data file (relative to itself), its shape,
//! and a SHA-256 digest of the raw block, so a file can be loaded without
//! any other information.

mod phantom;
mod prefilter;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use phantom::{make_phantom, random_smooth_blobs, PhantomKind, PhantomSpec, Primitive};
pub use prefilter::{fit_coefficients, prefilter_line};

use crate::bspline::CoefficientVolume;
use crate::geometry::{GeometryDescriptor, ScanGeometry};
use crate::recon::Sinogram;
use crate::{Error, Index3, Result};

const VOLUME_FORMAT: &str = "splinesplat-volume";
const SINOGRAM_FORMAT: &str = "splinesplat-sinogram";
const DTYPE: &str = "f32le";

/// What the values of a volume file mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Coefficients,
    Samples,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub format: String,
    pub shape: [usize; 3],
    pub origin_index: Index3,
    pub value_kind: ValueKind,
    pub basis_tag: Option<String>,
    pub dtype: String,
    pub data_file: String,
    pub data_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinogramHeader {
    pub format: String,
    pub num_rays: usize,
    pub geometry_digest: String,
    pub geometry: Option<GeometryDescriptor>,
    pub dtype: String,
    pub data_file: String,
    pub data_sha256: String,
}

/// A volume read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeFile {
    pub volume: CoefficientVolume,
    pub value_kind: ValueKind,
    pub basis_tag: Option<String>,
}

fn encode(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn decode(bytes: &[u8], expected: usize, path: &Path) -> Result<Vec<f64>> {
    if bytes.len() != expected * 4 {
        return Err(Error::Format(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Hex SHA-256 of a byte block.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of a file's contents.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Raw data file written next to the sidecar `path`.
pub fn data_path(path: &Path) -> PathBuf {
    path.with_extension("raw")
}

fn write_block(path: &Path, values: &[f64]) -> Result<(String, String)> {
    let bytes = encode(values);
    let data = data_path(path);
    fs::write(&data, &bytes)?;
    let name = data
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Format(format!("unusable file name {}", path.display())))?
        .to_string();
    Ok((name, sha256_hex(&bytes)))
}

fn read_block(path: &Path, data_file: &str, digest: &str, n: usize, dtype: &str) -> Result<Vec<f64>> {
    if dtype != DTYPE {
        return Err(Error::Format(format!("unsupported dtype '{dtype}'")));
    }
    let data = path.parent().unwrap_or(Path::new(".")).join(data_file);
    let bytes = fs::read(&data)?;
    let values = decode(&bytes, n, &data)?;
    if sha256_hex(&bytes) != digest {
        return Err(Error::Format(format!("{} does not match its recorded digest", data.display())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format(format!("{} holds non-finite values", data.display())));
    }
    Ok(values)
}

/// Writes the sidecar `path` and its data block; returns the header.
pub fn write_volume(
    path: impl AsRef<Path>,
    vol: &CoefficientVolume,
    value_kind: ValueKind,
    basis_tag: Option<&str>,
) -> Result<VolumeHeader> {
    let path = path.as_ref();
    let (data_file, data_sha256) = write_block(path, vol.data())?;
    let header = VolumeHeader {
        format: VOLUME_FORMAT.into(),
        shape: vol.shape(),
        origin_index: vol.origin(),
        value_kind,
        basis_tag: basis_tag.map(str::to_string),
        dtype: DTYPE.into(),
        data_file,
        data_sha256,
    };
    fs::write(path, serde_json::to_string_pretty(&header)?)?;
    Ok(header)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<VolumeFile> {
    let path = path.as_ref();
    let header: VolumeHeader = serde_json::from_slice(&fs::read(path)?)?;
    if header.format != VOLUME_FORMAT {
        return Err(Error::Format(format!("{} is not a volume file", path.display())));
    }
    let n: usize = header.shape.iter().product();
    let values = read_block(path, &header.data_file, &header.data_sha256, n, &header.dtype)?;
    Ok(VolumeFile {
        volume: CoefficientVolume::new(header.shape, header.origin_index, values)?,
        value_kind: header.value_kind,
        basis_tag: header.basis_tag,
    })
}

pub fn write_sinogram(
    path: impl AsRef<Path>,
    sino: &Sinogram,
    geometry: Option<&GeometryDescriptor>,
) -> Result<SinogramHeader> {
    let path = path.as_ref();
    let (data_file, data_sha256) = write_block(path, sino.values())?;
    let header = SinogramHeader {
        format: SINOGRAM_FORMAT.into(),
        num_rays: sino.len(),
        geometry_digest: sino.geometry_digest().to_string(),
        geometry: geometry.cloned(),
        dtype: DTYPE.into(),
        data_file,
        data_sha256,
    };
    fs::write(path, serde_json::to_string_pretty(&header)?)?;
    Ok(header)
}

pub fn read_sinogram(path: impl AsRef<Path>) -> Result<(Sinogram, Option<GeometryDescriptor>)> {
    let path = path.as_ref();
    let header: SinogramHeader = serde_json::from_slice(&fs::read(path)?)?;
    if header.format != SINOGRAM_FORMAT {
        return Err(Error::Format(format!("{} is not a sinogram file", path.display())));
    }
    let values = read_block(path, &header.data_file, &header.data_sha256, header.num_rays, &header.dtype)?;
    Ok((Sinogram::new(values, header.geometry_digest), header.geometry))
}

/// Reads a geometry descriptor from JSON and regenerates its rays.
pub fn read_geometry(path: impl AsRef<Path>) -> Result<ScanGeometry> {
    let desc: GeometryDescriptor = serde_json::from_slice(&fs::read(path)?)?;
    desc.build()
}

pub fn write_geometry(path: impl AsRef<Path>, desc: &GeometryDescriptor) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(desc)?)?;
    Ok(())
}
