//! Basis functions that can reach the ray from the current DDA cell.
//!
//! At cell `k` the candidates are the lattice points of the dominant-axis
//! plane through `k` within l-infinity distance `ceil(L - 1/2)` of `k`.
//! Candidates already returned at the two previous steps are skipped. A ray
//! visits at most three cells per plane, so the earlier windows of the same
//! plane are exactly those of the two previous steps; each window is a square
//! in a known plane and the exclusion reduces to integer comparisons.

use std::collections::HashSet;

use super::dda::GridBounds;
use crate::bspline::BasisSpec;
use crate::geometry::dominant_axis;
use crate::{Index3, Vec3};

/// Cells of the two previous traversal steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NeighborHistory {
    prev1: Option<Index3>,
    prev2: Option<Index3>,
}

impl NeighborHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Shifts the history after the step at cell `k`.
    #[inline]
    pub fn push(&mut self, k: Index3) {
        self.prev2 = self.prev1;
        self.prev1 = Some(k);
    }
}

/// Square candidate window on the dominant-axis plane.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub axis: usize,
    pub lateral: [usize; 2],
    pub radius: i64,
}

impl Window {
    pub fn new(omega: &Vec3, radius: i64) -> Self {
        let axis = dominant_axis(omega);
        Self {
            axis,
            lateral: [(axis + 1) % 3, (axis + 2) % 3],
            radius,
        }
    }

    #[inline]
    fn covered_by(&self, q: &Index3, prev: &Option<Index3>) -> bool {
        match prev {
            Some(p) => {
                p[self.axis] == q[self.axis]
                    && self
                        .lateral
                        .iter()
                        .all(|&i| (q[i] - p[i]).abs() <= self.radius)
            }
            None => false,
        }
    }

    /// Calls `f` on every new candidate at cell `k` that lies in `omega_box`,
    /// in a fixed order.
    #[inline]
    pub fn for_each(
        &self,
        k: &Index3,
        history: &NeighborHistory,
        omega_box: &GridBounds,
        mut f: impl FnMut(Index3),
    ) {
        let d = self.axis;
        if k[d] < omega_box.lo[d] || k[d] > omega_box.hi[d] {
            return;
        }
        let [a, b] = self.lateral;
        let r = self.radius;
        let (a0, a1) = ((k[a] - r).max(omega_box.lo[a]), (k[a] + r).min(omega_box.hi[a]));
        let (b0, b1) = ((k[b] - r).max(omega_box.lo[b]), (k[b] + r).min(omega_box.hi[b]));
        let mut q = *k;
        for qa in a0..=a1 {
            q[a] = qa;
            for qb in b0..=b1 {
                q[b] = qb;
                if !self.covered_by(&q, &history.prev1) && !self.covered_by(&q, &history.prev2) {
                    f(q);
                }
            }
        }
    }
}

/// New candidate basis indices at cell `k`, restricted to `omega_box`.
pub fn get_neighbors(
    k: &Index3,
    omega: &Vec3,
    basis: &BasisSpec,
    history: &NeighborHistory,
    omega_box: &GridBounds,
) -> Vec<Index3> {
    let mut out = Vec::new();
    Window::new(omega, basis.neighbor_radius()).for_each(k, history, omega_box, |q| out.push(q));
    out
}

/// Set-based version: the full window minus the two previously returned
/// sets, optionally restricted to `omega_box`.
pub fn get_neighbors_reference(
    k: &Index3,
    omega: &Vec3,
    basis: &BasisSpec,
    prev1: &HashSet<Index3>,
    prev2: &HashSet<Index3>,
    omega_box: Option<&GridBounds>,
) -> HashSet<Index3> {
    let d = dominant_axis(omega);
    let r = basis.neighbor_radius();
    let mut out = HashSet::new();
    for da in -r..=r {
        for db in -r..=r {
            let mut q = *k;
            q[(d + 1) % 3] += da;
            q[(d + 2) % 3] += db;
            if omega_box.is_some_and(|b| !b.contains(&q)) {
                continue;
            }
            if !prev1.contains(&q) && !prev2.contains(&q) {
                out.insert(q);
            }
        }
    }
    out
}
