//! Least-squares reconstruction with CGLS, measurement simulation and image
//! metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bspline::{synthesize, CoefficientVolume, VoxelVolume};
use crate::geometry::ScanGeometry;
use crate::raytrace::{LinearOperator, ProjectorKind};
use crate::{Error, Index3, Result, Vec3};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.99;

/// Relative tolerance of the dot-product test run before each solve.
pub const ADJOINT_TOLERANCE: f64 = 1e-10;

/// Measurements in geometry ray order.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    values: Vec<f64>,
    geometry_digest: String,
}

impl Sinogram {
    pub fn new(values: Vec<f64>, geometry_digest: String) -> Self {
        Self {
            values,
            geometry_digest,
        }
    }

    pub fn zeros(geometry: &ScanGeometry) -> Self {
        Self::new(vec![0.0; geometry.num_rays()], geometry.digest())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn geometry_digest(&self) -> &str {
        &self.geometry_digest
    }

    /// Refuses measurements produced for another geometry.
    pub fn check_geometry(&self, geometry: &ScanGeometry) -> Result<()> {
        let digest = geometry.digest();
        if self.geometry_digest != digest {
            return Err(Error::DigestMismatch {
                expected: digest,
                found: self.geometry_digest.clone(),
            });
        }
        if self.values.len() != geometry.num_rays() {
            return Err(Error::Shape(format!(
                "sinogram has {} values, geometry has {} rays",
                self.values.len(),
                geometry.num_rays()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    pub iterations: usize,
    pub projector: ProjectorKind,
    /// Seed of the measurement noise and of the adjoint pre-flight test.
    pub seed: u64,
    pub noise_variance: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            projector: ProjectorKind::Splinesplat,
            seed: 0,
            noise_variance: 1e-3,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || !(self.noise_variance >= 0.0) {
            return Err(Error::Config(format!("invalid reconstruction configuration {self:?}")));
        }
        Ok(())
    }
}

/// Adds i.i.d. zero-mean Gaussian noise of the given variance.
pub fn add_noise(values: &mut [f64], variance: f64, seed: u64) -> Result<()> {
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(Error::Config(format!("noise variance must be >= 0, got {variance}")));
    }
    if variance == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite positive deviation");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in values {
        *v += normal.sample(&mut rng);
    }
    Ok(())
}

/// `y = A c + n` with seeded Gaussian noise `n`.
pub fn simulate_measurements(
    op: &dyn LinearOperator,
    coeffs: &CoefficientVolume,
    geometry: &ScanGeometry,
    noise_variance: f64,
    seed: u64,
) -> Result<Sinogram> {
    if op.num_cols() != coeffs.len() || op.num_rows() != geometry.num_rays() {
        return Err(Error::Shape(format!(
            "operator is {}x{}, volume has {} values and geometry {} rays",
            op.num_rows(),
            op.num_cols(),
            coeffs.len(),
            geometry.num_rays()
        )));
    }
    let mut y = op.apply(coeffs.data());
    add_noise(&mut y, noise_variance, seed)?;
    Ok(Sinogram::new(y, geometry.digest()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative mismatch `|<Ax, y> - <x, A^T y>|` of a random dot-product test.
pub fn adjoint_mismatch(op: &dyn LinearOperator, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..op.num_cols()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..op.num_rows()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lhs = dot(&op.apply(&x), &y);
    let rhs = dot(&x, &op.apply_adjoint(&y));
    let scale = lhs.abs().max(rhs.abs());
    if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs).abs() / scale
    }
}

/// One entry of the CGLS log. Iteration 0 is the initial guess.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    /// `||A c - y||_2`
    pub objective: f64,
    /// `||A^T (A c - y)||_2`
    pub normal_residual: f64,
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub coeffs: CoefficientVolume,
    pub log: Vec<IterationLog>,
}

impl Reconstruction {
    /// Largest increase of the objective between consecutive iterations.
    pub fn max_objective_increase(&self) -> f64 {
        self.log
            .windows(2)
            .map(|w| w[1].objective - w[0].objective)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Residual log as CSV text.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("iteration,objective,normal_residual\n");
        for e in &self.log {
            out.push_str(&format!("{},{:e},{:e}\n", e.iteration, e.objective, e.normal_residual));
        }
        out
    }
}

fn check_finite(v: &[f64], iteration: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: "cgls iterate",
            iteration,
        })
    }
}

/// CGLS iterations on `min ||A c - y||` starting from `x0` (zero if `None`).
pub fn cgls(
    op: &dyn LinearOperator,
    y: &[f64],
    x0: Option<&[f64]>,
    iterations: usize,
) -> Result<(Vec<f64>, Vec<IterationLog>)> {
    let n = op.num_cols();
    if y.len() != op.num_rows() || x0.is_some_and(|x| x.len() != n) {
        return Err(Error::Shape("CGLS operand sizes do not match the operator".into()));
    }
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r: Vec<f64> = match x0 {
        Some(_) => op.apply(&x).iter().zip(y).map(|(ax, yi)| yi - ax).collect(),
        None => y.to_vec(),
    };
    let mut s = op.apply_adjoint(&r);
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    let mut log = vec![IterationLog {
        iteration: 0,
        objective: dot(&r, &r).sqrt(),
        normal_residual: gamma.sqrt(),
    }];
    for it in 1..=iterations {
        if gamma > 0.0 {
            let q = op.apply(&p);
            let qq = dot(&q, &q);
            if qq > 0.0 {
                let alpha = gamma / qq;
                x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
                r.iter_mut().zip(&q).for_each(|(ri, qi)| *ri -= alpha * qi);
                s = op.apply_adjoint(&r);
                let gamma_new = dot(&s, &s);
                let beta = gamma_new / gamma;
                p.iter_mut().zip(&s).for_each(|(pi, si)| *pi = si + beta * *pi);
                gamma = gamma_new;
            } else {
                gamma = 0.0;
            }
            check_finite(&x, it)?;
        }
        let objective = dot(&r, &r).sqrt();
        if !objective.is_finite() {
            return Err(Error::NonFinite {
                context: "cgls objective",
                iteration: it,
            });
        }
        log.push(IterationLog {
            iteration: it,
            objective,
            normal_residual: gamma.sqrt(),
        });
    }
    Ok((x, log))
}

/// Checks the measurements against `geometry`, runs the adjoint pre-flight
/// test and `cfg.iterations` CGLS steps from zero.
pub fn cgls_solve(
    op: &dyn LinearOperator,
    geometry: &ScanGeometry,
    sino: &Sinogram,
    template: &CoefficientVolume,
    cfg: &ReconConfig,
) -> Result<Reconstruction> {
    cfg.validate()?;
    sino.check_geometry(geometry)?;
    if op.num_cols() != template.len() || op.num_rows() != geometry.num_rays() {
        return Err(Error::Shape("operator does not match geometry and volume".into()));
    }
    let mismatch = adjoint_mismatch(op, cfg.seed ^ 0x5eed_ad70);
    if !(mismatch <= ADJOINT_TOLERANCE) {
        return Err(Error::AdjointMismatch(mismatch));
    }
    let (x, log) = cgls(op, sino.values(), None, cfg.iterations)?;
    Ok(Reconstruction {
        coeffs: template.with_data(x)?,
        log,
    })
}

/// `10 log10(peak^2 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(reference: &[f64], test: &[f64], peak: f64) -> Result<f64> {
    if reference.len() != test.len() || reference.is_empty() {
        return Err(Error::Shape(format!(
            "PSNR needs equal non-empty grids, got {} and {}",
            reference.len(),
            test.len()
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::Config(format!("PSNR peak must be positive, got {peak}")));
    }
    let mse = reference
        .iter()
        .zip(test)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// PSNR with the maximum of the reference as peak.
pub fn psnr_to_reference(reference: &VoxelVolume, test: &VoxelVolume) -> Result<f64> {
    if !reference.same_box(test) {
        return Err(Error::Shape("PSNR grids cover different boxes".into()));
    }
    let peak = reference.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    psnr(reference.data(), test.data(), peak)
}

/// Samples the spline volume at the lattice points of the box
/// `shape`/`origin`.
pub fn sample_volume(vol: &CoefficientVolume, shape: [usize; 3], origin: Index3) -> VoxelVolume {
    VoxelVolume::from_fn(shape, origin, |k| {
        synthesize(vol, &Vec3::new(k[0] as f64, k[1] as f64, k[2] as f64))
    })
}

/// Samples at the lattice points of the volume's own box.
pub fn sample_on_lattice(vol: &CoefficientVolume) -> VoxelVolume {
    sample_volume(vol, vol.shape(), vol.origin())
}
