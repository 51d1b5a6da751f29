use rayon::prelude::*;

use super::dda::dda_init;
use super::neighbors::{NeighborHistory, Window};
use super::{check_sinogram, reduce_rows, Lattice};
use crate::bspline::{BasisSpec, CoefficientVolume};
use crate::contribnet::{features, ContribNet, Scratch, SupportGate};
use crate::geometry::{project_onto_plane, Ray, ScanGeometry};
use crate::recon::Sinogram;
use crate::{Index3, Result, Vec3};

/// One basis function enumerated by the spline traversal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplineVisit {
    pub q: Index3,
    /// DDA step at which `q` was enumerated.
    pub step: usize,
    pub weight: f64,
}

#[inline]
fn lattice_point(q: &Index3) -> Vec3 {
    Vec3::new(q[0] as f64, q[1] as f64, q[2] as f64)
}

/// Walks `ray` and calls `f(flat, q, step, weight)` for every enumerated
/// basis function of `lattice`, in traversal order.
pub(crate) fn trace<F>(
    ray: &Ray,
    lattice: &Lattice,
    net: &ContribNet,
    radius: i64,
    scratch: &mut Scratch,
    mut f: F,
) where
    F: FnMut(usize, Index3, usize, f64),
{
    let window = Window::new(&ray.omega, radius);
    let gate = SupportGate::new(&ray.omega);
    let mut state = dda_init(ray, &lattice.bounds, radius);
    let mut history = NeighborHistory::new();
    let mut step = 0;
    while state.active {
        window.for_each(&state.k, &history, &lattice.bounds, |q| {
            let s_q = project_onto_plane(&(ray.s - lattice_point(&q)), &ray.omega);
            let w = if gate.hits(&s_q) {
                net.forward_features(&features(&ray.omega, &s_q), scratch).max(0.0)
            } else {
                0.0
            };
            f(lattice.flat(&q), q, step, w);
        });
        history.push(state.k);
        state.advance();
        step += 1;
    }
}

/// Line integral of the spline volume along `ray` with learned contributions.
pub fn splinesplat_project(
    vol: &CoefficientVolume,
    ray: &Ray,
    net: &ContribNet,
    basis: &BasisSpec,
) -> Result<f64> {
    net.check_basis(basis)?;
    Ok(project_one(vol, &Lattice::of(vol), ray, net, basis.neighbor_radius(), &mut Scratch::default()))
}

fn project_one(
    vol: &CoefficientVolume,
    lattice: &Lattice,
    ray: &Ray,
    net: &ContribNet,
    radius: i64,
    scratch: &mut Scratch,
) -> f64 {
    let c = vol.data();
    let mut acc = 0.0;
    trace(ray, lattice, net, radius, scratch, |flat, _, _, w| acc += c[flat] * w);
    acc
}

/// Every basis function enumerated along `ray`, with its step and weight.
pub fn splinesplat_visits(
    lattice_of: &CoefficientVolume,
    ray: &Ray,
    net: &ContribNet,
    basis: &BasisSpec,
) -> Result<Vec<SplineVisit>> {
    net.check_basis(basis)?;
    let mut out = Vec::new();
    let lattice = Lattice::of(lattice_of);
    trace(ray, &lattice, net, basis.neighbor_radius(), &mut Scratch::default(), |_, q, step, weight| {
        out.push(SplineVisit { q, step, weight })
    });
    Ok(out)
}

/// Brute-force sum of `c_k f(omega, Proj(s - k))` over every `k` of the box.
pub fn dense_project(vol: &CoefficientVolume, ray: &Ray, net: &ContribNet) -> f64 {
    let mut scratch = Scratch::default();
    (0..vol.len())
        .map(|i| {
            let k = lattice_point(&vol.lattice_index(i));
            let s_k = project_onto_plane(&(ray.s - k), &ray.omega);
            vol.data()[i] * net.eval_with(&ray.omega, &s_k, &mut scratch)
        })
        .sum()
}

/// Projects along every ray of `geometry`, in geometry order.
pub fn splinesplat_project_all(
    vol: &CoefficientVolume,
    geometry: &ScanGeometry,
    net: &ContribNet,
    basis: &BasisSpec,
) -> Result<Sinogram> {
    net.check_basis(basis)?;
    let lattice = Lattice::of(vol);
    let radius = basis.neighbor_radius();
    let values = geometry
        .rays()
        .par_iter()
        .map_init(Scratch::default, |scratch, ray| {
            project_one(vol, &lattice, ray, net, radius, scratch)
        })
        .collect();
    Ok(Sinogram::new(values, geometry.digest()))
}

/// Matched adjoint of [`splinesplat_project_all`] onto the box of `template`.
pub fn splinesplat_backproject(
    sino: &Sinogram,
    geometry: &ScanGeometry,
    net: &ContribNet,
    basis: &BasisSpec,
    template: &CoefficientVolume,
) -> Result<CoefficientVolume> {
    net.check_basis(basis)?;
    check_sinogram(sino, geometry)?;
    let lattice = Lattice::of(template);
    let radius = basis.neighbor_radius();
    let rays = geometry.rays();
    let data = reduce_rows(rays.len(), lattice.len(), |range, acc| {
        let mut scratch = Scratch::default();
        for m in range {
            let r = sino.values()[m];
            trace(&rays[m], &lattice, net, radius, &mut scratch, |flat, _, _, w| {
                acc[flat] += r * w
            });
        }
    });
    template.with_data(data)
}

/// Work done by the spline traversal of one ray.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TraversalStats {
    pub steps: usize,
    /// Dominant-axis planes crossed.
    pub planes: usize,
    /// Basis functions enumerated.
    pub candidates: usize,
    /// Candidates whose line meets the support, i.e. network evaluations.
    pub evaluations: usize,
    /// Cells per plane, maximum over the ray.
    pub max_cells_per_plane: usize,
}

pub fn traversal_stats(vol: &CoefficientVolume, ray: &Ray, basis: &BasisSpec) -> TraversalStats {
    let lattice = Lattice::of(vol);
    let radius = basis.neighbor_radius();
    let window = Window::new(&ray.omega, radius);
    let gate = SupportGate::new(&ray.omega);
    let mut stats = TraversalStats::default();
    let mut state = dda_init(ray, &lattice.bounds, radius);
    let mut history = NeighborHistory::new();
    let mut plane = None;
    let mut in_plane = 0;
    while state.active {
        let p = state.k[window.axis];
        if plane != Some(p) {
            plane = Some(p);
            stats.planes += 1;
            in_plane = 0;
        }
        in_plane += 1;
        stats.max_cells_per_plane = stats.max_cells_per_plane.max(in_plane);
        stats.steps += 1;
        window.for_each(&state.k, &history, &lattice.bounds, |q| {
            stats.candidates += 1;
            let s_q = project_onto_plane(&(ray.s - lattice_point(&q)), &ray.omega);
            if gate.hits(&s_q) {
                stats.evaluations += 1;
            }
        });
        history.push(state.k);
        state.advance();
    }
    stats
}
