//! Analytic phantoms: sums of ellipsoids or anisotropic Gaussian blobs.

use nalgebra::{Matrix3, Rotation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bspline::VoxelVolume;
use crate::geometry::Ray;
use crate::{Error, Index3, Result, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    /// Constant-valued ellipsoids.
    EllipsoidSet,
    /// Gaussians whose standard deviations are the semi-axes.
    SmoothBlobs,
}

/// One ellipsoid or blob in lattice coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    /// Roll, pitch and yaw (radians) of the principal axes.
    pub orientation: [f64; 3],
    pub amplitude: f64,
}

impl Primitive {
    fn validate(&self) -> Result<()> {
        let finite = self
            .center
            .iter()
            .chain(&self.semi_axes)
            .chain(&self.orientation)
            .chain(std::iter::once(&self.amplitude))
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Primitive(format!("non-finite parameter in {self:?}")));
        }
        if self.semi_axes.iter().any(|&a| a <= 0.0) {
            return Err(Error::Primitive(format!("semi-axes must be positive in {self:?}")));
        }
        Ok(())
    }

    fn rotation(&self) -> Rotation3<f64> {
        let [r, p, y] = self.orientation;
        Rotation3::from_euler_angles(r, p, y)
    }

    /// Quadratic form `M` with `(x - c)^T M (x - c) = 1` on the surface.
    fn shape_matrix(&self) -> Matrix3<f64> {
        let r = self.rotation();
        let d = Matrix3::from_diagonal(&Vec3::from(self.semi_axes.map(|a| 1.0 / (a * a))));
        r.matrix() * d * r.matrix().transpose()
    }

    /// `(a, b, c)` with `q(t) = a t^2 + 2 b t + c` the quadratic form along
    /// the ray.
    fn along(&self, ray: &Ray) -> (f64, f64, f64) {
        let m = self.shape_matrix();
        let d = ray.s - Vec3::from(self.center);
        let mw = m * ray.omega;
        (ray.omega.dot(&mw), d.dot(&mw), d.dot(&(m * d)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub primitives: Vec<Primitive>,
}

impl PhantomSpec {
    pub fn new(kind: PhantomKind, primitives: Vec<Primitive>) -> Result<Self> {
        for p in &primitives {
            p.validate()?;
        }
        Ok(Self { kind, primitives })
    }

    /// Unclipped sum of the primitives at `x`.
    pub fn value(&self, x: &Vec3) -> f64 {
        self.primitives
            .iter()
            .map(|p| {
                let d = x - Vec3::from(p.center);
                let q = d.dot(&(p.shape_matrix() * d));
                match self.kind {
                    PhantomKind::EllipsoidSet => {
                        if q <= 1.0 {
                            p.amplitude
                        } else {
                            0.0
                        }
                    }
                    PhantomKind::SmoothBlobs => p.amplitude * (-0.5 * q).exp(),
                }
            })
            .sum()
    }

    /// Exact line integral of the unclipped sum along `ray`.
    pub fn line_integral(&self, ray: &Ray) -> f64 {
        self.primitives
            .iter()
            .map(|p| {
                let (a, b, c) = p.along(ray);
                match self.kind {
                    PhantomKind::EllipsoidSet => {
                        // chord where a t^2 + 2 b t + c <= 1
                        let disc = b * b - a * (c - 1.0);
                        if disc > 0.0 {
                            p.amplitude * 2.0 * disc.sqrt() / a
                        } else {
                            0.0
                        }
                    }
                    PhantomKind::SmoothBlobs => {
                        p.amplitude
                            * (2.0 * std::f64::consts::PI / a).sqrt()
                            * (-0.5 * (c - b * b / a)).exp()
                    }
                }
            })
            .sum()
    }

    /// Multiplies every amplitude by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for p in &mut out.primitives {
            p.amplitude *= factor;
        }
        out
    }
}

/// Samples the phantom at the lattice points of the box, clipped to `[0, 1]`.
pub fn make_phantom(spec: &PhantomSpec, shape: [usize; 3], origin: Index3) -> Result<VoxelVolume> {
    if shape.contains(&0) {
        return Err(Error::Shape(format!("empty phantom shape {shape:?}")));
    }
    for p in &spec.primitives {
        p.validate()?;
    }
    Ok(VoxelVolume::from_fn(shape, origin, |k| {
        spec.value(&Vec3::new(k[0] as f64, k[1] as f64, k[2] as f64)).clamp(0.0, 1.0)
    }))
}

/// `count` random blobs inside the box, with amplitudes scaled so that the
/// largest lattice sample is exactly 1. Each blob stays three standard
/// deviations away from the box faces.
pub fn random_smooth_blobs(
    count: usize,
    shape: [usize; 3],
    origin: Index3,
    seed: u64,
) -> Result<PhantomSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = Vec3::from_fn(|i, _| origin[i] as f64);
    let hi = Vec3::from_fn(|i, _| (origin[i] + shape[i] as i64 - 1) as f64);
    let min_extent = shape.iter().copied().min().unwrap_or(0) as f64;
    if min_extent < 8.0 {
        return Err(Error::Shape(format!("box {shape:?} too small for blobs")));
    }
    let mut primitives = Vec::with_capacity(count);
    for _ in 0..count {
        let semi_axes = [0, 1, 2].map(|_| rng.random_range(0.06..0.14) * min_extent);
        let reach = 3.0 * semi_axes.iter().copied().fold(0.0, f64::max);
        let center = [0, 1, 2].map(|i| {
            let (a, b) = (lo[i] + reach, hi[i] - reach);
            if a < b {
                rng.random_range(a..b)
            } else {
                0.5 * (lo[i] + hi[i])
            }
        });
        let orientation = [0, 1, 2].map(|_| rng.random_range(0.0..std::f64::consts::PI));
        let amplitude = rng.random_range(0.3..1.0);
        primitives.push(Primitive {
            center,
            semi_axes,
            orientation,
            amplitude,
        });
    }
    let spec = PhantomSpec::new(PhantomKind::SmoothBlobs, primitives)?;
    let raw = VoxelVolume::from_fn(shape, origin, |k| {
        spec.value(&Vec3::new(k[0] as f64, k[1] as f64, k[2] as f64))
    });
    let peak = raw.data().iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Ok(spec);
    }
    Ok(spec.scaled(1.0 / peak))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball(radius: f64, amplitude: f64) -> Primitive {
        Primitive {
            center: [0.0; 3],
            semi_axes: [radius; 3],
            orientation: [0.0; 3],
            amplitude,
        }
    }

    #[test]
    fn centered_ball_is_indicator() {
        let spec = PhantomSpec::new(PhantomKind::EllipsoidSet, vec![ball(3.2, 1.0)]).unwrap();
        let v = make_phantom(&spec, [11, 11, 11], [-5; 3]).unwrap();
        for i in 0..v.len() {
            let k = v.lattice_index(i);
            let r2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
            assert_eq!(v.data()[i], if r2 <= 3.2 * 3.2 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn empty_spec_and_degenerate_primitive() {
        let spec = PhantomSpec::new(PhantomKind::SmoothBlobs, vec![]).unwrap();
        let v = make_phantom(&spec, [4, 4, 4], [0; 3]).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
        assert!(PhantomSpec::new(PhantomKind::EllipsoidSet, vec![ball(0.0, 1.0)]).is_err());
    }

    #[test]
    fn overlaps_are_clipped_sums() {
        let mut b = ball(2.0, 0.7);
        b.center = [1.0, 0.0, 0.0];
        let spec = PhantomSpec::new(PhantomKind::EllipsoidSet, vec![ball(2.5, 0.6), b]).unwrap();
        let v = make_phantom(&spec, [7, 7, 7], [-3; 3]).unwrap();
        for i in 0..v.len() {
            let k = v.lattice_index(i);
            let x = Vec3::new(k[0] as f64, k[1] as f64, k[2] as f64);
            let mut sum = 0.0;
            if x.norm() <= 2.5 {
                sum += 0.6;
            }
            if (x - Vec3::x()).norm() <= 2.0 {
                sum += 0.7;
            }
            assert_eq!(v.data()[i], f64::min(sum, 1.0));
        }
    }

    fn quadrature(spec: &PhantomSpec, ray: &Ray, half: f64, n: usize) -> f64 {
        let h = 2.0 * half / n as f64;
        (0..n).map(|j| spec.value(&ray.at(-half + (j as f64 + 0.5) * h)) * h).sum()
    }

    #[test]
    fn line_integrals_match_quadrature() {
        let spec = random_smooth_blobs(5, [20, 20, 16], [-10, -10, -8], 3).unwrap();
        let rays = [
            Ray::new(Vec3::new(1.0, 0.2, -0.3), Vec3::new(0.5, 1.0, 0.0)).unwrap(),
            Ray::new(Vec3::new(0.1, 1.0, 0.7), Vec3::new(-2.0, 0.0, 1.0)).unwrap(),
        ];
        for ray in &rays {
            let exact = spec.line_integral(ray);
            let num = quadrature(&spec, ray, 60.0, 200_000);
            assert!((exact - num).abs() < 1e-8 * exact.max(1.0), "{exact} vs {num}");
        }
        let e = PhantomSpec::new(PhantomKind::EllipsoidSet, vec![ball(2.0, 0.5)]).unwrap();
        let through = Ray::new(Vec3::new(1.0, 1.0, 0.0), Vec3::zeros()).unwrap();
        assert!((e.line_integral(&through) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn random_blobs_peak_at_one() {
        let spec = random_smooth_blobs(6, [16, 16, 12], [0; 3], 9).unwrap();
        let v = make_phantom(&spec, [16, 16, 12], [0; 3]).unwrap();
        let peak = v.data().iter().copied().fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 1e-12);
        assert_eq!(spec, random_smooth_blobs(6, [16, 16, 12], [0; 3], 9).unwrap());
    }
}
