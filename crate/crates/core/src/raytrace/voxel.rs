use rayon::prelude::*;

use super::dda::dda_init;
use super::{check_sinogram, reduce_rows, Lattice};
use crate::bspline::VoxelVolume;
use crate::geometry::{Ray, ScanGeometry};
use crate::recon::Sinogram;
use crate::Result;

/// Walks `ray` through the cells of `lattice` and calls `f(flat, chord)`.
#[inline]
pub(crate) fn trace(ray: &Ray, lattice: &Lattice, mut f: impl FnMut(usize, f64)) {
    let mut state = dda_init(ray, &lattice.bounds, 0);
    while state.active {
        f(lattice.flat(&state.k), state.chord());
        state.advance();
    }
}

/// Sum of cell values weighted by the chord length of `ray` in each cell.
pub fn voxel_project(vol: &VoxelVolume, ray: &Ray) -> f64 {
    let lattice = Lattice::of(vol);
    let v = vol.data();
    let mut acc = 0.0;
    trace(ray, &lattice, |flat, len| acc += v[flat] * len);
    acc
}

/// `(flat index, chord length)` of every cell crossed by `ray`.
pub fn voxel_weights(vol: &VoxelVolume, ray: &Ray) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    trace(ray, &Lattice::of(vol), |flat, len| out.push((flat, len)));
    out
}

pub fn voxel_project_all(vol: &VoxelVolume, geometry: &ScanGeometry) -> Result<Sinogram> {
    let values = geometry.rays().par_iter().map(|ray| voxel_project(vol, ray)).collect();
    Ok(Sinogram::new(values, geometry.digest()))
}

/// Matched adjoint of [`voxel_project_all`] onto the box of `template`.
pub fn voxel_backproject(
    sino: &Sinogram,
    geometry: &ScanGeometry,
    template: &VoxelVolume,
) -> Result<VoxelVolume> {
    check_sinogram(sino, geometry)?;
    let lattice = Lattice::of(template);
    let rays = geometry.rays();
    let data = reduce_rows(rays.len(), lattice.len(), |range, acc| {
        for m in range {
            let r = sino.values()[m];
            trace(&rays[m], &lattice, |flat, len| acc[flat] += r * len);
        }
    });
    template.with_data(data)
}
