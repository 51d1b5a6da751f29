//! Oracle-supervised training loop with Adam.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{features, Activation, ContribNet, Scratch, SupportGate, INPUT_DIM};
use crate::geometry::plane_basis;
use crate::{Error, Result, Vec3};

/// Uniform direction on the unit sphere.
pub fn sample_direction(rng: &mut impl Rng) -> Vec3 {
    let [x, y, z]: [f64; 3] = UnitSphere.sample(rng);
    Vec3::new(x, y, z).normalize()
}

/// Uniform point of the disk of radius `radius` in the plane orthogonal to
/// `omega`.
pub fn sample_offset(rng: &mut impl Rng, omega: &Vec3, radius: f64) -> Vec3 {
    let b = plane_basis(omega);
    let r = radius * rng.random::<f64>().sqrt();
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    b.u * (r * angle.cos()) + b.v * (r * angle.sin())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate reached at `max_steps` by cosine decay. Equal to
    /// `learning_rate` for a constant rate.
    pub final_learning_rate: f64,
    /// Validation MSE at which training stops.
    pub epsilon: f64,
    pub val_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Validation period in steps.
    pub check_every: usize,
    /// Radius of the offset disk the pairs are drawn from.
    pub footprint_radius: f64,
    pub adam: AdamParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 2e-3,
            final_learning_rate: 2e-6,
            epsilon: 1e-7,
            val_size: 10_000,
            max_steps: 600_000,
            seed: 0,
            check_every: 100,
            footprint_radius: crate::bspline::FOOTPRINT_RADIUS,
            adam: AdamParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size >= 1
            && self.learning_rate > 0.0
            && self.final_learning_rate > 0.0
            && self.epsilon > 0.0
            && self.val_size >= 1
            && self.check_every >= 1
            && self.footprint_radius > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training configuration {self:?}")))
        }
    }

    fn rate_at(&self, step: usize) -> f64 {
        if self.max_steps == 0 {
            return self.learning_rate;
        }
        let x = (step as f64 / self.max_steps as f64).min(1.0);
        let c = 0.5 * (1.0 + (std::f64::consts::PI * x).cos());
        self.final_learning_rate + (self.learning_rate - self.final_learning_rate) * c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub converged: bool,
    /// Mean squared error of the last training batch.
    pub final_train_mse: f64,
    pub final_val_mse: f64,
    pub max_abs_val_error: f64,
    pub config: TrainConfig,
    /// `(step, validation MSE)` at every check.
    pub history: Vec<(usize, f64)>,
}

/// Pairs drawn by the sampler, labeled by the oracle. Pairs whose line misses
/// the support keep the exact label 0 without calling the oracle.
struct Batch {
    features: Vec<[f64; INPUT_DIM]>,
    inside: Vec<bool>,
    labels: Vec<f64>,
}

fn draw_batch<F>(rng: &mut ChaCha8Rng, n: usize, radius: f64, oracle: &F) -> Batch
where
    F: Fn(&Vec3, &Vec3) -> f64 + Sync,
{
    let pairs: Vec<(Vec3, Vec3)> = (0..n)
        .map(|_| {
            let omega = sample_direction(rng);
            let s = sample_offset(rng, &omega, radius);
            (omega, s)
        })
        .collect();
    let inside: Vec<bool> = pairs
        .iter()
        .map(|(omega, s)| SupportGate::new(omega).hits(s))
        .collect();
    let labels: Vec<f64> = pairs
        .par_iter()
        .zip(inside.par_iter())
        .map(|((omega, s), &hit)| if hit { oracle(omega, s) } else { 0.0 })
        .collect();
    Batch {
        features: pairs.iter().map(|(o, s)| features(o, s)).collect(),
        inside,
        labels,
    }
}

/// Validation MSE and max absolute error of the gated, clamped network.
fn evaluate(net: &ContribNet, batch: &Batch, scratch: &mut Scratch) -> (f64, f64) {
    let mut sse = 0.0;
    let mut max_err = 0.0f64;
    for i in 0..batch.labels.len() {
        let pred = if batch.inside[i] {
            net.forward_features(&batch.features[i], scratch).max(0.0)
        } else {
            0.0
        };
        let e = pred - batch.labels[i];
        sse += e * e;
        max_err = max_err.max(e.abs());
    }
    (sse / batch.labels.len() as f64, max_err)
}

/// Forward/backward buffers for one sample.
struct Backprop {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Backprop {
    fn new(layer_sizes: &[usize]) -> Self {
        let width = *layer_sizes.iter().max().unwrap();
        Self {
            acts: layer_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            delta: vec![0.0; width],
            delta_prev: vec![0.0; width],
        }
    }

    fn forward(&mut self, net: &ContribNet, x: &[f64; INPUT_DIM]) -> f64 {
        self.acts[0].copy_from_slice(x);
        let n_layers = net.layer_sizes.len() - 1;
        for (l, (off, n_in, n_out)) in net.layer_offsets().enumerate() {
            let (head, tail) = self.acts.split_at_mut(l + 1);
            let input = &head[l];
            let z = &mut tail[0];
            let w = &net.params[off..off + n_in * n_out];
            z.copy_from_slice(&net.params[off + n_in * n_out..off + n_in * n_out + n_out]);
            for (i, &xi) in input.iter().enumerate() {
                for (zj, wj) in z.iter_mut().zip(&w[i * n_out..(i + 1) * n_out]) {
                    *zj += xi * wj;
                }
            }
            if l + 1 < n_layers {
                let act = net.activation;
                z.iter_mut().for_each(|v| *v = act.apply(*v));
            }
        }
        self.acts[n_layers][0]
    }

    /// Accumulates `d_out * d f / d theta` into `grad`.
    fn backward(&mut self, net: &ContribNet, d_out: f64, grad: &mut [f64]) {
        let layers: Vec<_> = net.layer_offsets().collect();
        self.delta[0] = d_out;
        let act: Activation = net.activation;
        for l in (0..layers.len()).rev() {
            let (off, n_in, n_out) = layers[l];
            let input = &self.acts[l];
            let delta = &self.delta[..n_out];
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for (g, d) in gb.iter_mut().zip(delta) {
                *g += d;
            }
            for (i, &xi) in input.iter().enumerate() {
                for (g, d) in gw[i * n_out..(i + 1) * n_out].iter_mut().zip(delta) {
                    *g += xi * d;
                }
            }
            if l > 0 {
                let w = &net.params[off..off + n_in * n_out];
                for i in 0..n_in {
                    let row = &w[i * n_out..(i + 1) * n_out];
                    let mut acc = 0.0;
                    for (wj, d) in row.iter().zip(delta) {
                        acc += wj * d;
                    }
                    self.delta_prev[i] = acc * act.derivative_from_value(input[i]);
                }
                std::mem::swap(&mut self.delta, &mut self.delta_prev);
            }
        }
    }
}

struct Adam {
    p: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(p: AdamParams, n: usize) -> Self {
        Self {
            p,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let AdamParams { beta1, beta2, eps } = self.p;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Trains `net` against `oracle` until the validation MSE drops to
/// `cfg.epsilon` or `cfg.max_steps` is reached.
///
/// A fixed validation set is drawn first; every step then draws a fresh batch
/// of `(omega, s)` pairs and takes one Adam step on the mean squared error of
/// the clamped output. A negative prediction on a zero label has no loss.
/// The loop is single-threaded and fully determined by `cfg.seed`; only oracle
/// labeling runs in parallel.
pub fn train<F>(net: ContribNet, cfg: &TrainConfig, oracle: F) -> Result<(ContribNet, TrainReport)>
where
    F: Fn(&Vec3, &Vec3) -> f64 + Sync,
{
    train_with_progress(net, cfg, oracle, |_, _, _| {})
}

/// [`train`] with a callback `(step, validation MSE, max abs error)` invoked
/// at every validation check.
pub fn train_with_progress<F, P>(
    mut net: ContribNet,
    cfg: &TrainConfig,
    oracle: F,
    mut progress: P,
) -> Result<(ContribNet, TrainReport)>
where
    F: Fn(&Vec3, &Vec3) -> f64 + Sync,
    P: FnMut(usize, f64, f64),
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let val = draw_batch(&mut rng, cfg.val_size, cfg.footprint_radius, &oracle);
    let mut scratch = Scratch::default();
    let mut bp = Backprop::new(&net.layer_sizes);
    let mut adam = Adam::new(cfg.adam, net.params.len());
    let mut grad = vec![0.0; net.params.len()];
    let mut history = Vec::new();

    let (mut val_mse, mut val_max) = evaluate(&net, &val, &mut scratch);
    history.push((0, val_mse));
    let mut train_mse = f64::NAN;
    let mut step = 0;
    while val_mse > cfg.epsilon && step < cfg.max_steps {
        let batch = draw_batch(&mut rng, cfg.batch_size, cfg.footprint_radius, &oracle);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 2.0 / cfg.batch_size as f64;
        let mut sse = 0.0;
        for i in 0..batch.labels.len() {
            if !batch.inside[i] {
                continue;
            }
            let y = batch.labels[i];
            let f = bp.forward(&net, &batch.features[i]);
            let r = if f < 0.0 && y <= 0.0 { 0.0 } else { f - y };
            sse += r * r;
            if r != 0.0 {
                bp.backward(&net, scale * r, &mut grad);
            }
        }
        train_mse = sse / cfg.batch_size as f64;
        if !train_mse.is_finite() {
            return Err(Error::Training(format!("non-finite training loss at step {step}")));
        }
        adam.step(&mut net.params, &grad, cfg.rate_at(step));
        step += 1;
        if step % cfg.check_every == 0 || step == cfg.max_steps {
            (val_mse, val_max) = evaluate(&net, &val, &mut scratch);
            if !val_mse.is_finite() {
                return Err(Error::Training(format!("non-finite validation loss at step {step}")));
            }
            history.push((step, val_mse));
            progress(step, val_mse, val_max);
        }
    }
    let report = TrainReport {
        steps: step,
        converged: val_mse <= cfg.epsilon,
        final_train_mse: train_mse,
        final_val_mse: val_mse,
        max_abs_val_error: val_max,
        config: cfg.clone(),
        history,
    };
    net.report = Some(report.clone());
    Ok((net, report))
}

/// Statistics of `|f(omega, s) - f(-omega, s)|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryAudit {
    pub mean: f64,
    pub max: f64,
}

pub fn symmetry_audit(net: &ContribNet, samples: usize, seed: u64) -> SymmetryAudit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scratch = Scratch::default();
    let (mut sum, mut max) = (0.0, 0.0f64);
    for _ in 0..samples {
        let omega = sample_direction(&mut rng);
        let s = sample_offset(&mut rng, &omega, crate::bspline::FOOTPRINT_RADIUS);
        let d = (net.eval_with(&omega, &s, &mut scratch) - net.eval_with(&-omega, &s, &mut scratch)).abs();
        sum += d;
        max = max.max(d);
    }
    SymmetryAudit {
        mean: sum / samples.max(1) as f64,
        max,
    }
}
