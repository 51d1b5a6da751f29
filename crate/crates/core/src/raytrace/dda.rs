//! Amanatides–Woo traversal of the unit cells `[k - 1/2, k + 1/2)^3`.

use crate::geometry::{clip_to_box, dominant_axis, Ray};
use crate::{Index3, Vec3};

/// Inclusive box of lattice indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridBounds {
    pub lo: Index3,
    pub hi: Index3,
}

impl GridBounds {
    pub fn new(lo: Index3, hi: Index3) -> Self {
        debug_assert!((0..3).all(|i| lo[i] <= hi[i]));
        Self { lo, hi }
    }

    pub fn of(vol: &crate::bspline::CoefficientVolume) -> Self {
        Self::new(vol.origin(), vol.upper())
    }

    /// Grows the box by `margin` cells on every axis except `axis`.
    pub fn dilated_except(&self, axis: usize, margin: i64) -> Self {
        let mut out = *self;
        for i in (0..3).filter(|&i| i != axis) {
            out.lo[i] -= margin;
            out.hi[i] += margin;
        }
        out
    }

    #[inline]
    pub fn contains(&self, k: &Index3) -> bool {
        (0..3).all(|i| k[i] >= self.lo[i] && k[i] <= self.hi[i])
    }

    /// Continuous extent covered by the cells of the box.
    pub fn cell_extent(&self) -> (Vec3, Vec3) {
        (
            Vec3::from_fn(|i, _| self.lo[i] as f64 - 0.5),
            Vec3::from_fn(|i, _| self.hi[i] as f64 + 0.5),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraversalState {
    /// Current cell.
    pub k: Index3,
    /// Ray parameter of the next boundary crossing on each axis.
    pub t_max: [f64; 3],
    /// Parameter increment per cell on each axis.
    pub t_delta: [f64; 3],
    pub step: [i64; 3],
    pub active: bool,
    /// Parameter at which the ray entered the current cell.
    pub t: f64,
    /// Parameter at which the ray leaves the traversal box.
    pub t_exit: f64,
    /// Traversal box.
    pub bounds: GridBounds,
}

impl TraversalState {
    fn inactive(bounds: GridBounds) -> Self {
        Self {
            k: [0; 3],
            t_max: [f64::INFINITY; 3],
            t_delta: [f64::INFINITY; 3],
            step: [0; 3],
            active: false,
            t: 0.0,
            t_exit: 0.0,
            bounds,
        }
    }

    /// Axis crossed next; ties go to the smallest index.
    #[inline]
    fn next_axis(&self) -> usize {
        let mut a = 0;
        for i in 1..3 {
            if self.t_max[i] < self.t_max[a] {
                a = i;
            }
        }
        a
    }

    /// Length of the ray inside the current cell.
    #[inline]
    pub fn chord(&self) -> f64 {
        let t_out = self.t_max[self.next_axis()].min(self.t_exit);
        (t_out - self.t).max(0.0)
    }

    /// Advances to the next cell in place.
    #[inline]
    pub fn advance(&mut self) {
        debug_assert!(self.active);
        let a = self.next_axis();
        self.k[a] += self.step[a];
        self.t = self.t_max[a];
        self.t_max[a] += self.t_delta[a];
        if self.k[a] < self.bounds.lo[a] || self.k[a] > self.bounds.hi[a] {
            self.active = false;
        }
    }
}

/// Sets up the traversal of `ray` through `bounds`, dilated by `margin` cells
/// on the axes other than the ray's dominant axis. The state is inactive when
/// the ray misses the box.
pub fn dda_init(ray: &Ray, bounds: &GridBounds, margin: i64) -> TraversalState {
    let box_ = bounds.dilated_except(dominant_axis(&ray.omega), margin);
    let (lo, hi) = box_.cell_extent();
    let Some((t0, t1)) = clip_to_box(ray, &lo, &hi) else {
        return TraversalState::inactive(box_);
    };
    let p = ray.at(t0);
    let mut state = TraversalState::inactive(box_);
    state.active = true;
    state.t = t0;
    state.t_exit = t1;
    for i in 0..3 {
        let k = ((p[i] + 0.5).floor() as i64).clamp(box_.lo[i], box_.hi[i]);
        let w = ray.omega[i];
        state.k[i] = k;
        if w > 0.0 {
            state.step[i] = 1;
            state.t_delta[i] = 1.0 / w;
            state.t_max[i] = (k as f64 + 0.5 - ray.s[i]) / w;
        } else if w < 0.0 {
            state.step[i] = -1;
            state.t_delta[i] = -1.0 / w;
            state.t_max[i] = (k as f64 - 0.5 - ray.s[i]) / w;
        }
    }
    state
}

/// One traversal step: moves to the neighboring cell across the nearest
/// boundary and deactivates when leaving the box.
pub fn dda_step(mut state: TraversalState) -> TraversalState {
    state.advance();
    state
}

/// All cells visited by the traversal, in order.
pub fn visited_cells(ray: &Ray, bounds: &GridBounds, margin: i64) -> Vec<Index3> {
    let mut state = dda_init(ray, bounds, margin);
    let mut out = Vec::new();
    while state.active {
        out.push(state.k);
        state.advance();
    }
    out
}
