//! X-ray projection of volumes expanded in shifted tensor-product quadratic
//! B-splines.
//!
//! The forward projector walks each ray with a voxel DDA and, at every step,
//! collects the basis functions of the current dominant-axis plane whose
//! footprint can reach the ray. Their line integrals are produced by a small
//! learned regressor ([`contribnet::ContribNet`]). The same traversal yields
//! the exactly matched adjoint, and a classic voxel DDA projector is provided
//! as the baseline for reconstruction experiments.

pub mod bspline;
pub mod contribnet;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod raytrace;
pub mod recon;

pub use error::{Error, Result};

/// 3-vector used for all continuous coordinates (lattice units).
pub type Vec3 = nalgebra::Vector3<f64>;

/// Integer lattice index.
pub type Index3 = [i64; 3];
