//! Tensor-product quadratic B-spline generator, coefficient volumes and
//! quadrature oracles for the line integral of a single basis function.

use serde::{Deserialize, Serialize};

use crate::geometry::{clip_to_box, Ray};
use crate::{Error, Index3, Result, Vec3};

pub mod footprint;

/// Spline degree implemented by this crate.
pub const DEGREE: usize = 2;

/// Half width of the support of the quadratic B-spline, `(DEGREE + 1) / 2`.
pub const SUPPORT_HALF_WIDTH: f64 = 1.5;

/// Maximal footprint radius `L` of the tensor-product quadratic B-spline.
///
/// Supremum of the in-plane crossing radius measured by
/// [`footprint::measure`] (analytically `3 * sqrt(2)`), rounded up at the
/// fourth decimal.
pub const FOOTPRINT_RADIUS: f64 = 4.2427;

/// Default step of the Simpson oracle.
pub const ORACLE_STEP: f64 = 1.0 / 256.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub degree: usize,
    pub support_half_width: f64,
    pub footprint_radius: f64,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self::quadratic()
    }
}

impl BasisSpec {
    pub fn quadratic() -> Self {
        Self {
            degree: DEGREE,
            support_half_width: SUPPORT_HALF_WIDTH,
            footprint_radius: FOOTPRINT_RADIUS,
        }
    }

    /// `ceil(L - 1/2)`: l-infinity radius of the in-plane neighbor window.
    pub fn neighbor_radius(&self) -> i64 {
        (self.footprint_radius - 0.5).ceil() as i64
    }

    /// Identifier stored in model and volume files.
    pub fn tag(&self) -> String {
        format!(
            "bspline3-deg{}-L{:.4}",
            self.degree, self.footprint_radius
        )
    }
}

/// Centered quadratic B-spline.
#[inline]
pub fn bspline2_1d(x: f64) -> f64 {
    let a = x.abs();
    if a <= 0.5 {
        0.75 - a * a
    } else if a <= 1.5 {
        let d = 1.5 - a;
        0.5 * d * d
    } else {
        0.0
    }
}

/// Tensor-product generator `phi(x) = b(x1) b(x2) b(x3)`.
#[inline]
pub fn phi(x: &Vec3) -> f64 {
    bspline2_1d(x[0]) * bspline2_1d(x[1]) * bspline2_1d(x[2])
}

/// A box of values on the integer lattice, stored k1-major.
///
/// Used both for spline coefficients and for voxel values.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientVolume {
    shape: [usize; 3],
    origin: Index3,
    data: Vec<f64>,
}

/// Voxel values share the coefficient layout.
pub type VoxelVolume = CoefficientVolume;

impl CoefficientVolume {
    pub fn new(shape: [usize; 3], origin: Index3, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n == 0 {
            return Err(Error::Shape(format!("empty volume shape {shape:?}")));
        }
        if data.len() != n {
            return Err(Error::Shape(format!(
                "volume {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Shape(format!("non-finite value at flat index {i}")));
        }
        Ok(Self { shape, origin, data })
    }

    /// Lattice origin that centers a box of `shape` on the lattice origin.
    pub fn centered_origin(shape: [usize; 3]) -> Index3 {
        shape.map(|n| -((n as i64 - 1) / 2))
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Self::zeros_like_box(shape, Self::centered_origin(shape))
    }

    pub fn zeros_like_box(shape: [usize; 3], origin: Index3) -> Self {
        let n = shape.iter().product();
        assert!(n > 0, "empty volume shape {shape:?}");
        Self {
            shape,
            origin,
            data: vec![0.0; n],
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self::zeros_like_box(other.shape, other.origin)
    }

    pub fn from_fn(shape: [usize; 3], origin: Index3, mut f: impl FnMut(Index3) -> f64) -> Self {
        let mut v = Self::zeros_like_box(shape, origin);
        for flat in 0..v.data.len() {
            v.data[flat] = f(v.lattice_index(flat));
        }
        v
    }

    /// Same box with new values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.shape, self.origin, data)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn origin(&self) -> Index3 {
        self.origin
    }

    /// Largest lattice index contained in the box.
    pub fn upper(&self) -> Index3 {
        [0, 1, 2].map(|i| self.origin[i] + self.shape[i] as i64 - 1)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn contains(&self, k: &Index3) -> bool {
        (0..3).all(|i| {
            let r = k[i] - self.origin[i];
            r >= 0 && (r as usize) < self.shape[i]
        })
    }

    #[inline]
    pub fn flat_index(&self, k: &Index3) -> Option<usize> {
        if !self.contains(k) {
            return None;
        }
        let r = [0, 1, 2].map(|i| (k[i] - self.origin[i]) as usize);
        Some((r[0] * self.shape[1] + r[1]) * self.shape[2] + r[2])
    }

    #[inline]
    pub fn lattice_index(&self, flat: usize) -> Index3 {
        let i2 = flat % self.shape[2];
        let rest = flat / self.shape[2];
        let i1 = rest % self.shape[1];
        let i0 = rest / self.shape[1];
        [
            self.origin[0] + i0 as i64,
            self.origin[1] + i1 as i64,
            self.origin[2] + i2 as i64,
        ]
    }

    /// Value at lattice index `k`, zero outside the box.
    #[inline]
    pub fn get(&self, k: &Index3) -> f64 {
        self.flat_index(k).map_or(0.0, |i| self.data[i])
    }

    pub fn same_box(&self, other: &Self) -> bool {
        self.shape == other.shape && self.origin == other.origin
    }
}

/// Evaluates `f(x) = sum_k c_k phi(x - k)` from the at most 27 shifts whose
/// support contains `x`.
pub fn synthesize(vol: &CoefficientVolume, x: &Vec3) -> f64 {
    let base = x.map(|v| v.round() as i64);
    let mut w = [[0.0; 3]; 3];
    for axis in 0..3 {
        for (j, off) in (-1..=1).enumerate() {
            w[axis][j] = bspline2_1d(x[axis] - (base[axis] + off) as f64);
        }
    }
    let mut acc = 0.0;
    for (a, oa) in (-1..=1).enumerate() {
        for (b, ob) in (-1..=1).enumerate() {
            let wab = w[0][a] * w[1][b];
            if wab == 0.0 {
                continue;
            }
            for (c, oc) in (-1..=1).enumerate() {
                let k = [base[0] + oa, base[1] + ob, base[2] + oc];
                if let Some(i) = vol.flat_index(&k) {
                    acc += vol.data()[i] * wab * w[2][c];
                }
            }
        }
    }
    acc
}

/// Ray parameter interval inside the support cube of `phi(. - center)`.
pub fn clip_to_support(ray: &Ray, center: &Vec3) -> Option<(f64, f64)> {
    let h = Vec3::repeat(SUPPORT_HALF_WIDTH);
    clip_to_box(ray, &(center - h), &(center + h))
}

/// Sorted ray parameters in `[t_in, t_out]` where the integrand
/// `t -> phi(s + t omega - center)` changes polynomial piece.
fn knots(ray: &Ray, center: &Vec3, t_in: f64, t_out: f64) -> Vec<f64> {
    let x0 = ray.s - center;
    let mut ts = Vec::with_capacity(14);
    ts.push(t_in);
    for i in 0..3 {
        let w = ray.omega[i];
        if w == 0.0 {
            continue;
        }
        for b in [-1.5, -0.5, 0.5, 1.5] {
            let t = (b - x0[i]) / w;
            if t > t_in && t < t_out {
                ts.push(t);
            }
        }
    }
    ts.push(t_out);
    ts.sort_by(f64::total_cmp);
    ts
}

/// `integral phi(s + t omega - center) dt` by composite Simpson with step at
/// most `max_step`. Panels are aligned to the knots of the piecewise
/// polynomial integrand.
pub fn simpson_project(ray: &Ray, center: &Vec3, max_step: f64) -> f64 {
    let Some((t_in, t_out)) = clip_to_support(ray, center) else {
        return 0.0;
    };
    let x0 = ray.s - center;
    let f = |t: f64| phi(&(x0 + ray.omega * t));
    let ts = knots(ray, center, t_in, t_out);
    let mut total = 0.0;
    for pair in ts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let len = b - a;
        if len <= 0.0 {
            continue;
        }
        let mut n = (len / max_step).ceil() as usize;
        n = n.max(2);
        n += n % 2;
        let h = len / n as f64;
        let mut odd = 0.0;
        let mut even = 0.0;
        for j in 1..n {
            let v = f(a + h * j as f64);
            if j % 2 == 1 {
                odd += v;
            } else {
                even += v;
            }
        }
        total += h / 3.0 * (f(a) + 4.0 * odd + 2.0 * even + f(b));
    }
    total
}

/// Line integral of `phi(. - center)` along `ray`: composite Simpson at step
/// 1/256 over the clipped support interval.
pub fn oracle_project(ray: &Ray, center: &Vec3) -> f64 {
    simpson_project(ray, center, ORACLE_STEP)
}

const GAUSS4_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GAUSS4_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

/// Line integral of `phi(. - center)` by 4-point Gauss-Legendre on every
/// polynomial piece. The integrand has degree at most 6 per piece, so this is
/// exact up to rounding.
pub fn exact_project(ray: &Ray, center: &Vec3) -> f64 {
    let Some((t_in, t_out)) = clip_to_support(ray, center) else {
        return 0.0;
    };
    let x0 = ray.s - center;
    let ts = knots(ray, center, t_in, t_out);
    let mut total = 0.0;
    for pair in ts.windows(2) {
        let half = 0.5 * (pair[1] - pair[0]);
        if half <= 0.0 {
            continue;
        }
        let mid = 0.5 * (pair[1] + pair[0]);
        let mut acc = 0.0;
        for (x, w) in GAUSS4_NODES.iter().zip(GAUSS4_WEIGHTS) {
            acc += w * phi(&(x0 + ray.omega * (mid + half * x)));
        }
        total += half * acc;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bspline_values() {
        assert_eq!(bspline2_1d(0.0), 0.75);
        assert_eq!(bspline2_1d(0.5), 0.5);
        assert_eq!(bspline2_1d(-0.5), 0.5);
        assert_eq!(bspline2_1d(1.5), 0.0);
        assert_eq!(bspline2_1d(2.0), 0.0);
        // continuity of value and slope at the piece boundary
        let e = 1e-7;
        assert!((bspline2_1d(0.5 - e) - bspline2_1d(0.5 + e)).abs() < 1e-6);
        let d_left = (bspline2_1d(0.5) - bspline2_1d(0.5 - e)) / e;
        let d_right = (bspline2_1d(0.5 + e) - bspline2_1d(0.5)) / e;
        assert!((d_left - d_right).abs() < 1e-5);
    }

    #[test]
    fn phi_values() {
        assert_eq!(phi(&Vec3::zeros()), 0.421875);
        assert_eq!(phi(&Vec3::new(1.5, 0.0, 0.0)), 0.0);
        assert_eq!(phi(&Vec3::repeat(0.5)), 0.125);
    }

    #[test]
    fn neighbor_radius_is_four() {
        assert_eq!(BasisSpec::quadratic().neighbor_radius(), 4);
        assert!(FOOTPRINT_RADIUS >= SUPPORT_HALF_WIDTH);
        assert_eq!(SUPPORT_HALF_WIDTH, (DEGREE as f64 + 1.0) / 2.0);
    }

    #[test]
    fn synthesize_examples() {
        let zero = CoefficientVolume::zeros([5, 5, 5]);
        assert_eq!(synthesize(&zero, &Vec3::new(0.3, -0.2, 1.1)), 0.0);

        let mut one = CoefficientVolume::zeros([5, 5, 5]);
        let i = one.flat_index(&[0, 0, 0]).unwrap();
        one.data_mut()[i] = 1.0;
        assert_eq!(synthesize(&one, &Vec3::zeros()), 0.421875);

        let ones = CoefficientVolume::from_fn([9, 9, 9], CoefficientVolume::centered_origin([9; 3]), |_| 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x = Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            assert!((synthesize(&ones, &x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn volume_indexing_round_trips() {
        let v = CoefficientVolume::zeros([3, 4, 5]);
        assert_eq!(v.origin(), [-1, -1, -2]);
        assert_eq!(v.upper(), [1, 2, 2]);
        for flat in 0..v.len() {
            assert_eq!(v.flat_index(&v.lattice_index(flat)), Some(flat));
        }
        assert_eq!(v.flat_index(&[2, 0, 0]), None);
        assert!(CoefficientVolume::new([2, 2, 2], [0; 3], vec![0.0; 7]).is_err());
        assert!(CoefficientVolume::new([1, 1, 1], [0; 3], vec![f64::NAN]).is_err());
    }

    #[test]
    fn oracle_axis_aligned_and_grazing() {
        let r = Ray::new(Vec3::x(), Vec3::zeros()).unwrap();
        assert!((oracle_project(&r, &Vec3::zeros()) - 0.5625).abs() < 1e-12);
        assert!((exact_project(&r, &Vec3::zeros()) - 0.5625).abs() < 1e-14);
        let g = Ray::new(Vec3::x(), Vec3::new(0.0, 0.0, 1.5)).unwrap();
        assert_eq!(oracle_project(&g, &Vec3::zeros()), 0.0);
        assert_eq!(exact_project(&g, &Vec3::zeros()), 0.0);
    }

    #[test]
    fn oracle_diagonal_refines() {
        let r = Ray::new(Vec3::repeat(1.0), Vec3::zeros()).unwrap();
        let coarse = oracle_project(&r, &Vec3::zeros());
        let fine = simpson_project(&r, &Vec3::zeros(), 1.0 / 1024.0);
        assert!((coarse - fine).abs() < 1e-8, "{coarse} vs {fine}");
        assert!((coarse - exact_project(&r, &Vec3::zeros())).abs() < 1e-10);
    }

    #[test]
    fn oracle_symmetries() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let w = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let p = Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let k = Vec3::from_fn(|_, _| rng.random_range(-3..=3) as f64);
            let ray = Ray::new(w, p).unwrap();
            let flipped = Ray { omega: -ray.omega, s: ray.s };
            let a = oracle_project(&ray, &k);
            assert!((a - oracle_project(&flipped, &k)).abs() < 1e-10);
            let shifted = ray.relative_to(&k);
            assert!((a - oracle_project(&shifted, &Vec3::zeros())).abs() < 1e-10);
        }
    }

    #[test]
    fn oracle_mass_is_one() {
        // integral over H_omega of P phi equals the integral of phi; jittered
        // samples over a square holding the whole footprint
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let half = SUPPORT_HALF_WIDTH * 3f64.sqrt();
        let strata = 316;
        let cell = 2.0 * half / strata as f64;
        for _ in 0..3 {
            let omega = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            let b = crate::geometry::plane_basis(&omega);
            let mut acc = 0.0;
            for i in 0..strata {
                for j in 0..strata {
                    let x = -half + cell * (i as f64 + rng.random::<f64>());
                    let y = -half + cell * (j as f64 + rng.random::<f64>());
                    let s = b.u * x + b.v * y;
                    acc += exact_project(&Ray { omega, s }, &Vec3::zeros());
                }
            }
            let mass = acc * cell * cell;
            assert!((mass - 1.0).abs() < 0.01, "mass {mass}");
        }
    }
}
