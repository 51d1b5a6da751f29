//! Ray traversal, projectors and their adjoints.
//!
//! Two projector families share the DDA of [`dda`]:
//!
//! * the spline projector, which at every DDA step enumerates the basis
//!   functions of the current dominant-axis plane ([`neighbors`]) and adds
//!   their learned contributions;
//! * the voxel projector, which weights cell values by chord lengths.
//!
//! Adjoints replay the same traversal, so each forward/adjoint pair is an
//! exact transpose. [`SystemMatrix`] caches the weights of either family for
//! repeated application.

pub mod dda;
mod matrix;
pub mod neighbors;
mod spline;
mod voxel;

use rayon::prelude::*;

pub use dda::{dda_init, dda_step, visited_cells, GridBounds, TraversalState};
pub use matrix::SystemMatrix;
pub use neighbors::{get_neighbors, get_neighbors_reference, NeighborHistory};
pub use spline::{
    dense_project, splinesplat_backproject, splinesplat_project, splinesplat_project_all,
    splinesplat_visits, traversal_stats, SplineVisit, TraversalStats,
};
pub use voxel::{voxel_backproject, voxel_project, voxel_project_all, voxel_weights};

use crate::bspline::{BasisSpec, CoefficientVolume};
use crate::contribnet::ContribNet;
use crate::geometry::ScanGeometry;
use crate::recon::Sinogram;
use crate::{Error, Index3, Result};

/// Number of private accumulators used by the adjoints. Fixed so that the
/// summation order does not depend on the thread count.
const REDUCTION_CHUNKS: usize = 32;

/// Box of coefficient indices with its flat k1-major layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Lattice {
    pub bounds: GridBounds,
    pub shape: [usize; 3],
}

impl Lattice {
    pub fn of(vol: &CoefficientVolume) -> Self {
        Self {
            bounds: GridBounds::of(vol),
            shape: vol.shape(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    /// Flat position of `q`, which must lie inside the box.
    #[inline]
    pub fn flat(&self, q: &Index3) -> usize {
        let r = [0, 1, 2].map(|i| (q[i] - self.bounds.lo[i]) as usize);
        (r[0] * self.shape[1] + r[1]) * self.shape[2] + r[2]
    }
}

/// A linear map given by forward and adjoint applications.
pub trait LinearOperator: Sync {
    fn num_rows(&self) -> usize;
    fn num_cols(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64>;
}

/// Which projector family to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorKind {
    Splinesplat,
    Voxel,
}

/// On-the-fly projector over a geometry and a coefficient box.
pub struct Projector<'a> {
    geometry: &'a ScanGeometry,
    template: CoefficientVolume,
    net: Option<&'a ContribNet>,
    basis: BasisSpec,
}

impl<'a> Projector<'a> {
    pub fn splinesplat(
        geometry: &'a ScanGeometry,
        template: &CoefficientVolume,
        net: &'a ContribNet,
        basis: &BasisSpec,
    ) -> Result<Self> {
        net.check_basis(basis)?;
        Ok(Self {
            geometry,
            template: CoefficientVolume::zeros_like(template),
            net: Some(net),
            basis: *basis,
        })
    }

    pub fn voxel(geometry: &'a ScanGeometry, template: &CoefficientVolume) -> Self {
        Self {
            geometry,
            template: CoefficientVolume::zeros_like(template),
            net: None,
            basis: BasisSpec::quadratic(),
        }
    }

    fn volume(&self, x: &[f64]) -> CoefficientVolume {
        self.template.with_data(x.to_vec()).expect("operand matches the volume box")
    }
}

impl LinearOperator for Projector<'_> {
    fn num_rows(&self) -> usize {
        self.geometry.num_rays()
    }

    fn num_cols(&self) -> usize {
        self.template.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let vol = self.volume(x);
        let sino = match self.net {
            Some(net) => splinesplat_project_all(&vol, self.geometry, net, &self.basis),
            None => voxel_project_all(&vol, self.geometry),
        };
        sino.expect("validated at construction").into_values()
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let sino = Sinogram::new(y.to_vec(), self.geometry.digest());
        let vol = match self.net {
            Some(net) => splinesplat_backproject(&sino, self.geometry, net, &self.basis, &self.template),
            None => voxel_backproject(&sino, self.geometry, &self.template),
        };
        vol.expect("validated at construction").into_data()
    }
}

pub(crate) fn check_sinogram(sino: &Sinogram, geometry: &ScanGeometry) -> Result<()> {
    if sino.len() != geometry.num_rays() {
        return Err(Error::Shape(format!(
            "sinogram has {} values but the geometry has {} rays",
            sino.len(),
            geometry.num_rays()
        )));
    }
    Ok(())
}

/// Sums per-chunk private accumulators of length `n` in chunk order.
/// `fill(range, acc)` must add the contributions of rows `range` into `acc`.
pub(crate) fn reduce_rows<F>(num_rows: usize, n: usize, fill: F) -> Vec<f64>
where
    F: Fn(std::ops::Range<usize>, &mut [f64]) + Sync,
{
    let chunk = num_rows.div_ceil(REDUCTION_CHUNKS).max(1);
    let partial: Vec<Vec<f64>> = (0..num_rows.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; n];
            fill(c * chunk..((c + 1) * chunk).min(num_rows), &mut acc);
            acc
        })
        .collect();
    let mut out = vec![0.0; n];
    for acc in &partial {
        for (o, a) in out.iter_mut().zip(acc) {
            *o += a;
        }
    }
    out
}
