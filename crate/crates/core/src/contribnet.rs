//! Shallow MLP approximating the line integral `P phi(omega, s)` of the
//! basis generator.
//!
//! The network sees the six scalars `(omega, s)` after folding them by the
//! symmetries of the tensor-product B-spline: axis sign flips and axis
//! permutations (the generator is invariant under both), and the reversal
//! `(omega, s) -> (omega, -s)` (the line through `-s` with direction `-omega`
//! is the point reflection of the original one). The folded direction has
//! `omega_1 >= omega_2 >= omega_3 >= 0` and the folded offset has
//! `s_3 >= 0`.
//!
//! Lines that miss the support cube get exactly zero without touching the
//! network, and the network output is clamped below at zero.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bspline::{BasisSpec, SUPPORT_HALF_WIDTH};
use crate::{Error, Result, Vec3};

mod train;

pub use train::{
    sample_direction, sample_offset, symmetry_audit, train, train_with_progress, AdamParams, SymmetryAudit,
    TrainConfig, TrainReport,
};

/// Number of network inputs.
pub const INPUT_DIM: usize = 6;

const MAGIC: &[u8; 8] = b"SSNET001";

static DEFAULT_NET: &[u8] = include_bytes!("../assets/default_contribnet.ssnet");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// `x / sqrt(1 + x^2)`
    AlgebraicSigmoid,
}

impl Activation {
    #[inline(always)]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::AlgebraicSigmoid => z / (1.0 + z * z).sqrt(),
        }
    }

    /// Derivative expressed through the activation value `a`.
    #[inline(always)]
    fn derivative_from_value(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::AlgebraicSigmoid => {
                let q = 1.0 - a * a;
                q * q.sqrt()
            }
        }
    }
}

/// Exact zero test: does the line `{ s + t omega }` cross the open support
/// cube of the generator?
#[derive(Clone, Copy, Debug)]
pub struct SupportGate {
    inv: Vec3,
    parallel: [bool; 3],
}

impl SupportGate {
    pub fn new(omega: &Vec3) -> Self {
        Self {
            inv: omega.map(|w| if w == 0.0 { 0.0 } else { 1.0 / w }),
            parallel: [omega[0] == 0.0, omega[1] == 0.0, omega[2] == 0.0],
        }
    }

    /// `p` is any point of the line, relative to the basis center.
    #[inline]
    pub fn hits(&self, p: &Vec3) -> bool {
        let h = SUPPORT_HALF_WIDTH;
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if self.parallel[i] {
                if p[i].abs() >= h {
                    return false;
                }
            } else {
                let a = (-h - p[i]) * self.inv[i];
                let b = (h - p[i]) * self.inv[i];
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        t0 < t1
    }
}

/// Folds `(omega, s)` into the canonical region described in the module docs.
#[inline]
pub fn features(omega: &Vec3, s: &Vec3) -> [f64; INPUT_DIM] {
    let mut w = [omega[0].abs(), omega[1].abs(), omega[2].abs()];
    let mut p = [0.0; 3];
    for i in 0..3 {
        p[i] = if omega[i] < 0.0 { -s[i] } else { s[i] };
    }
    // stable sort of three axes by descending |omega|
    if w[1] > w[0] {
        w.swap(0, 1);
        p.swap(0, 1);
    }
    if w[2] > w[1] {
        w.swap(1, 2);
        p.swap(1, 2);
        if w[1] > w[0] {
            w.swap(0, 1);
            p.swap(0, 1);
        }
    }
    if p[2] < 0.0 {
        p = [-p[0], -p[1], -p[2]];
    }
    [w[0], w[1], w[2], p[0], p[1], p[2]]
}

/// Result of [`ContribNet::validate`]-level checks shared by constructors.
fn check_layers(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config("network needs at least an input and an output layer".into()));
    }
    if layer_sizes[0] != INPUT_DIM || *layer_sizes.last().unwrap() != 1 {
        return Err(Error::Config(format!(
            "network layers {layer_sizes:?} must map {INPUT_DIM} inputs to 1 output"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Config(format!("zero-width layer in {layer_sizes:?}")));
    }
    Ok(())
}

fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Shallow MLP `f_theta` for the basis contribution.
///
/// Parameters are stored flat. Layer `l` with `n_in` inputs and `n_out`
/// outputs occupies `n_in * n_out` weights (input-major, `w[i * n_out + j]`)
/// followed by `n_out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct ContribNet {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
    activation: Activation,
    basis_tag: String,
    report: Option<TrainReport>,
}

/// Per-thread buffers for forward passes.
#[derive(Clone, Debug, Default)]
pub struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    layer_sizes: Vec<usize>,
    activation: Activation,
    basis_tag: String,
    num_params: usize,
    report: Option<TrainReport>,
}

impl ContribNet {
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        params: Vec<f64>,
        activation: Activation,
        basis_tag: String,
    ) -> Result<Self> {
        check_layers(&layer_sizes)?;
        let n = param_count(&layer_sizes);
        if params.len() != n {
            return Err(Error::Config(format!(
                "layers {layer_sizes:?} need {n} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("non-finite network parameter".into()));
        }
        Ok(Self {
            layer_sizes,
            params,
            activation,
            basis_tag,
            report: None,
        })
    }

    /// All-zero network for `basis`.
    pub fn zeros(hidden: &[usize], activation: Activation, basis: &BasisSpec) -> Result<Self> {
        let layer_sizes = Self::layout(hidden);
        let n = param_count(&layer_sizes);
        Self::from_parts(layer_sizes, vec![0.0; n], activation, basis.tag())
    }

    /// Glorot-normal hidden layers; the output layer starts at zero.
    pub fn random(
        hidden: &[usize],
        activation: Activation,
        basis: &BasisSpec,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut net = Self::zeros(hidden, activation, basis)?;
        let layers: Vec<_> = net.layer_offsets().collect();
        let last = layers.len() - 1;
        for (l, (off, n_in, n_out)) in layers.into_iter().enumerate() {
            if l == last {
                break;
            }
            let std = (2.0 / (n_in + n_out) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("valid std");
            for w in &mut net.params[off..off + n_in * n_out] {
                *w = normal.sample(rng);
            }
        }
        Ok(net)
    }

    fn layout(hidden: &[usize]) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(INPUT_DIM);
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        sizes
    }

    /// The shipped network trained for [`BasisSpec::quadratic`].
    pub fn default_trained() -> Self {
        Self::from_bytes(DEFAULT_NET).expect("bundled network is valid")
    }

    /// `(offset, n_in, n_out)` for every layer.
    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = 0;
        self.layer_sizes.windows(2).map(move |w| {
            let o = off;
            off += w[0] * w[1] + w[1];
            (o, w[0], w[1])
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.layer_sizes[1..self.layer_sizes.len() - 1]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn basis_tag(&self) -> &str {
        &self.basis_tag
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    #[cfg(test)]
    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn report(&self) -> Option<&TrainReport> {
        self.report.as_ref()
    }

    pub fn set_report(&mut self, report: Option<TrainReport>) {
        self.report = report;
    }

    /// Refuses to project with a network trained for another basis.
    pub fn check_basis(&self, basis: &BasisSpec) -> Result<()> {
        let expected = basis.tag();
        if self.basis_tag != expected {
            return Err(Error::Config(format!(
                "network was trained for basis '{}' but the projector uses '{}'",
                self.basis_tag, expected
            )));
        }
        Ok(())
    }

    /// Raw network output on already folded features.
    pub fn forward_features(&self, x: &[f64; INPUT_DIM], scratch: &mut Scratch) -> f64 {
        let width = *self.layer_sizes.iter().max().unwrap();
        scratch.a.resize(width, 0.0);
        scratch.b.resize(width, 0.0);
        scratch.a[..INPUT_DIM].copy_from_slice(x);
        let n_layers = self.layer_sizes.len() - 1;
        let (mut cur, mut next) = (&mut scratch.a, &mut scratch.b);
        for (l, (off, n_in, n_out)) in self.layer_offsets().enumerate() {
            let w = &self.params[off..off + n_in * n_out];
            let bias = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let z = &mut next[..n_out];
            z.copy_from_slice(bias);
            for (i, &xi) in cur[..n_in].iter().enumerate() {
                let row = &w[i * n_out..(i + 1) * n_out];
                for (zj, wj) in z.iter_mut().zip(row) {
                    *zj += xi * wj;
                }
            }
            if l + 1 < n_layers {
                let act = self.activation;
                z.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    /// `f_theta(omega, s)`: zero when the line misses the support, otherwise
    /// the clamped network prediction.
    pub fn eval_with(&self, omega: &Vec3, s: &Vec3, scratch: &mut Scratch) -> f64 {
        if !SupportGate::new(omega).hits(s) {
            return 0.0;
        }
        self.forward_features(&features(omega, s), scratch).max(0.0)
    }

    pub fn eval(&self, omega: &Vec3, s: &Vec3) -> f64 {
        self.eval_with(omega, s, &mut Scratch::default())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            layer_sizes: self.layer_sizes.clone(),
            activation: self.activation,
            basis_tag: self.basis_tag.clone(),
            num_params: self.params.len(),
            report: self.report.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a contribution network file".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() < header_len {
            return Err(Error::Format("truncated network header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])
            .map_err(|e| Error::Format(format!("corrupted network header: {e}")))?;
        check_layers(&header.layer_sizes)?;
        let expected = param_count(&header.layer_sizes);
        if header.num_params != expected {
            return Err(Error::Format(format!(
                "header declares {} parameters but layers need {expected}",
                header.num_params
            )));
        }
        let block = &body[header_len..];
        if block.len() != 8 * expected {
            return Err(Error::Format(format!(
                "parameter block has {} bytes, expected {}",
                block.len(),
                8 * expected
            )));
        }
        let params = block
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut net = Self::from_parts(header.layer_sizes, params, header.activation, header.basis_tag)?;
        net.report = header.report;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Free-function form of [`ContribNet::eval`] with the input preconditions
/// checked.
pub fn net_eval(net: &ContribNet, omega: &Vec3, s: &Vec3) -> Result<f64> {
    if (omega.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("direction {omega:?} is not a unit vector")));
    }
    if s.dot(omega).abs() > 1e-6 {
        return Err(Error::Config("offset does not lie in the plane orthogonal to omega".into()));
    }
    Ok(net.eval(omega, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::exact_project;
    use crate::geometry::Ray;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pair(rng: &mut ChaCha8Rng) -> (Vec3, Vec3) {
        let omega = sample_direction(rng);
        let s = sample_offset(rng, &omega, 3.0);
        (omega, s)
    }

    #[test]
    fn features_are_invariant_under_symmetries() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let (omega, s) = random_pair(&mut rng);
            let f = features(&omega, &s);
            assert!(f[0] >= f[1] && f[1] >= f[2] && f[2] >= 0.0 && f[5] >= 0.0);
            assert_eq!(features(&-omega, &s), f);
            // swap two axes
            let sw = |v: &Vec3| Vec3::new(v[2], v[1], v[0]);
            let g = features(&sw(&omega), &sw(&s));
            for i in 0..6 {
                assert!((g[i] - f[i]).abs() < 1e-15);
            }
            // the oracle agrees these are the same line integral
            let a = exact_project(&Ray { omega, s }, &Vec3::zeros());
            let b = exact_project(&Ray { omega: sw(&omega), s: sw(&s) }, &Vec3::zeros());
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn folded_inputs_reproduce_the_integral() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let (omega, s) = random_pair(&mut rng);
            let f = features(&omega, &s);
            let fo = Vec3::new(f[0], f[1], f[2]);
            let fs = Vec3::new(f[3], f[4], f[5]);
            let a = exact_project(&Ray { omega, s }, &Vec3::zeros());
            let b = exact_project(&Ray { omega: fo, s: fs }, &Vec3::zeros());
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gate_matches_support_clipping() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..2000 {
            let (omega, s) = random_pair(&mut rng);
            let hit = SupportGate::new(&omega).hits(&s);
            if !hit {
                assert_eq!(exact_project(&Ray { omega, s }, &Vec3::zeros()), 0.0);
            }
            let clip = crate::bspline::clip_to_support(&Ray { omega, s }, &Vec3::zeros());
            assert_eq!(hit, clip.is_some());
        }
        let g = SupportGate::new(&Vec3::x());
        assert!(!g.hits(&Vec3::new(0.0, 0.0, 1.5)));
        assert!(g.hits(&Vec3::new(0.0, 0.0, 1.49)));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = ContribNet::zeros(&[8, 8], Activation::AlgebraicSigmoid, &BasisSpec::quadratic()).unwrap();
        assert_eq!(net.eval(&Vec3::x(), &Vec3::zeros()), 0.0);
    }

    #[test]
    fn output_is_clamped_and_zero_off_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = ContribNet::random(&[16, 16], Activation::Tanh, &BasisSpec::quadratic(), &mut rng).unwrap();
        for p in net.params_mut() {
            *p = rng.random_range(-1.0..1.0);
        }
        for _ in 0..500 {
            let (omega, s) = random_pair(&mut rng);
            let v = net.eval(&omega, &s);
            assert!(v >= 0.0);
            if s.norm() > 1.5 * 3f64.sqrt() {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn rejects_bad_layouts_and_inputs() {
        assert!(ContribNet::from_parts(vec![5, 1], vec![0.0; 6], Activation::Tanh, "x".into()).is_err());
        assert!(ContribNet::from_parts(vec![6, 2], vec![0.0; 14], Activation::Tanh, "x".into()).is_err());
        assert!(ContribNet::from_parts(vec![6, 1], vec![0.0; 6], Activation::Tanh, "x".into()).is_err());
        let net = ContribNet::zeros(&[4], Activation::Tanh, &BasisSpec::quadratic()).unwrap();
        assert!(net_eval(&net, &Vec3::new(2.0, 0.0, 0.0), &Vec3::zeros()).is_err());
        assert!(net_eval(&net, &Vec3::x(), &Vec3::new(1.0, 0.0, 0.0)).is_err());
        assert_eq!(net_eval(&net, &Vec3::x(), &Vec3::zeros()).unwrap(), 0.0);
    }

    #[test]
    fn save_load_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = ContribNet::random(&[12, 7], Activation::AlgebraicSigmoid, &BasisSpec::quadratic(), &mut rng).unwrap();
        let mut net = net;
        for p in net.params_mut() {
            *p += rng.random_range(-0.1..0.1);
        }
        let dir = std::env::temp_dir().join(format!("ssnet-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("n.ssnet");
        net.save(&path).unwrap();
        let back = ContribNet::load(&path).unwrap();
        assert_eq!(back, net);
        for _ in 0..100 {
            let (omega, s) = random_pair(&mut rng);
            assert_eq!(back.eval(&omega, &s).to_bits(), net.eval(&omega, &s).to_bits());
        }
        let bytes = fs::read(&path).unwrap();
        assert!(matches!(ContribNet::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        assert!(matches!(ContribNet::from_bytes(&bytes[..20]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[17] = b'#';
        assert!(ContribNet::from_bytes(&bad).is_err());
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn basis_tag_guard() {
        let net = ContribNet::zeros(&[4], Activation::Tanh, &BasisSpec::quadratic()).unwrap();
        assert!(net.check_basis(&BasisSpec::quadratic()).is_ok());
        let mut other = BasisSpec::quadratic();
        other.footprint_radius = 5.0;
        assert!(matches!(net.check_basis(&other), Err(Error::Config(_))));
    }

    #[test]
    fn bundled_net_reproduces_axis_integral_and_vanishes_outside() {
        let net = ContribNet::default_trained();
        assert!(net.check_basis(&BasisSpec::quadratic()).is_ok());
        assert!(net.report().is_some_and(|r| r.converged));
        // along e1 through the center: integral of beta2 times beta2(0)^2
        let v = net.eval(&Vec3::x(), &Vec3::zeros());
        assert!((v - 0.5625).abs() <= 3.2e-3, "{v}");
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let omega = sample_direction(&mut rng);
            let b = crate::geometry::plane_basis(&omega);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let r = rng.random_range(crate::bspline::FOOTPRINT_RADIUS + 1e-6..8.0);
            let s = (b.u * angle.cos() + b.v * angle.sin()) * r;
            assert_eq!(net.eval(&omega, &s), 0.0);
        }
    }
}
