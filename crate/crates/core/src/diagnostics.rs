//! Self-checks run by the `check` command: analytic gradients against
//! central differences, and reservoir inclusion frequencies.

use std::time::{Duration, Instant};

use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::buffer::ReplayBuffer;
use crate::error::Result;
use crate::model::ModelParams;
use crate::numerics::{affine_backward, affine_forward, logit_mse, relu_backward, relu_forward, softmax_cross_entropy, Matrix};
use crate::rng::Rng;
use crate::trainer::{composite_loss, StepInputs};

pub const FD_STEP: f64 = 1e-5;

/// `|a - b| / max(|a| + |b|, 1e-12)` over whole tensors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-12)
}

/// Central-difference gradient of `f` at `at`.
pub fn numeric_gradient(at: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = at.to_vec();
    (0..at.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub configurations: usize,
    /// `(check name, worst relative error)` in a fixed order.
    pub worst: Vec<(&'static str, f64)>,
    pub elapsed: Duration,
}

impl GradientReport {
    pub fn max_error(&self) -> f64 {
        self.worst.iter().map(|&(_, e)| e).fold(0.0, f64::max)
    }
}

fn normal_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        scale * v
    })
}

fn to_matrix(shape: (usize, usize), data: &[f64]) -> Matrix<f64> {
    Matrix::new(shape.0, shape.1, data.to_vec()).expect("shape matches data")
}

fn flatten(params: &ModelParams<f64>) -> Vec<f64> {
    params
        .layers()
        .iter()
        .flat_map(|l| l.weight.data().iter().chain(l.bias.data()).copied())
        .collect()
}

fn unflatten(template: &ModelParams<f64>, flat: &[f64]) -> ModelParams<f64> {
    let mut out = template.clone();
    let mut at = 0;
    for layer in out.layers_mut() {
        for m in [&mut layer.weight, &mut layer.bias] {
            let n = m.data().len();
            m.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
    }
    out
}

/// Checks every differentiable primitive and the full four-term step
/// objective at `configurations` random points.
pub fn gradient_suite(configurations: usize, seed: u64) -> Result<GradientReport> {
    let start = Instant::now();
    let mut rng = Rng::seed_from_u64(seed);
    let names = ["cross_entropy", "logit_mse", "affine_x", "affine_w", "affine_b", "relu", "step_objective"];
    let mut worst = [0.0f64; 7];
    let h = FD_STEP;

    for _ in 0..configurations {
        let n = rng.random_range(1..=4);
        let k = rng.random_range(2..=5);
        let d = rng.random_range(1..=5);

        // cross-entropy w.r.t. logits
        let z = normal_matrix(n, k, 2.0, &mut rng);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let g = softmax_cross_entropy(&z, &y)?.grad;
        let num = numeric_gradient(z.data(), h, |p| softmax_cross_entropy(&to_matrix(z.shape(), p), &y).unwrap().value);
        worst[0] = worst[0].max(relative_error(g.data(), &num));

        // logit MSE w.r.t. the live logits
        let zr = normal_matrix(n, k, 2.0, &mut rng);
        let g = logit_mse(&z, &zr)?.grad;
        let num = numeric_gradient(z.data(), h, |p| logit_mse(&to_matrix(z.shape(), p), &zr).unwrap().value);
        worst[1] = worst[1].max(relative_error(g.data(), &num));

        // affine layer under a random linear readout
        let x = normal_matrix(n, d, 1.0, &mut rng);
        let w = normal_matrix(d, k, 1.0, &mut rng);
        let b = normal_matrix(1, k, 1.0, &mut rng);
        let up = normal_matrix(n, k, 1.0, &mut rng);
        let readout = |out: &Matrix<f64>| out.data().iter().zip(up.data()).map(|(a, b)| a * b).sum::<f64>();
        let grads = affine_backward(&x, &w, &up)?;
        let num = numeric_gradient(x.data(), h, |p| readout(&affine_forward(&to_matrix(x.shape(), p), &w, &b).unwrap()));
        worst[2] = worst[2].max(relative_error(grads.dx.data(), &num));
        let num = numeric_gradient(w.data(), h, |p| readout(&affine_forward(&x, &to_matrix(w.shape(), p), &b).unwrap()));
        worst[3] = worst[3].max(relative_error(grads.dw.data(), &num));
        let num = numeric_gradient(b.data(), h, |p| readout(&affine_forward(&x, &w, &to_matrix(b.shape(), p)).unwrap()));
        worst[4] = worst[4].max(relative_error(grads.db.data(), &num));

        // relu away from the kink
        let a = Matrix::from_fn(n, k, |_, _| {
            let v: f64 = rng.random_range(0.01..2.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        });
        let ga = relu_backward(&a, &up)?;
        let num = numeric_gradient(a.data(), h, |p| readout(&relu_forward(&to_matrix(a.shape(), p))));
        worst[5] = worst[5].max(relative_error(ga.data(), &num));

        // full step objective w.r.t. every parameter
        let hidden = rng.random_range(2..=6);
        let sizes = [d, hidden, k];
        let params = ModelParams::<f64>::init_with(&sizes, &mut rng)?;
        let nr = rng.random_range(1..=3);
        let nd = rng.random_range(1..=3);
        let inputs = StepInputs {
            x: normal_matrix(n, d, 1.0, &mut rng),
            y,
            replay: Some((
                normal_matrix(nr, d, 1.0, &mut rng),
                (0..nr).map(|_| rng.random_range(0..k)).collect(),
            )),
            distill: Some((normal_matrix(nd, d, 1.0, &mut rng), normal_matrix(nd, k, 1.0, &mut rng))),
            old_logits: Some(normal_matrix(n, k, 1.0, &mut rng)),
        };
        let alpha = rng.random_range(0.1..2.0);
        let beta = rng.random_range(0.1..2.0);
        let out = composite_loss(&params, &inputs, alpha, beta)?;
        let analytic: Vec<f64> = out
            .grads
            .layers
            .iter()
            .flat_map(|l| l.weight.data().iter().chain(l.bias.data()).copied())
            .collect();
        let flat = flatten(&params);
        let num = numeric_gradient(&flat, h, |p| {
            composite_loss(&unflatten(&params, p), &inputs, alpha, beta).unwrap().loss.total
        });
        worst[6] = worst[6].max(relative_error(&analytic, &num));
    }

    Ok(GradientReport {
        configurations,
        worst: names.into_iter().zip(worst).collect(),
        elapsed: start.elapsed(),
    })
}

#[derive(Debug, Clone)]
pub struct ReservoirReport {
    pub items: usize,
    pub capacity: usize,
    pub trials: usize,
    /// Number of trials (out of `trials`) in which each item was held at the end.
    pub inclusion_counts: Vec<u32>,
    pub elapsed: Duration,
}

impl ReservoirReport {
    pub fn expected_frequency(&self) -> f64 {
        self.capacity as f64 / self.items as f64
    }

    pub fn sigma(&self) -> f64 {
        let p = self.expected_frequency();
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }

    /// Largest `|freq - p| / sigma` over all items.
    pub fn max_z(&self) -> f64 {
        let p = self.expected_frequency();
        let sigma = self.sigma();
        self.inclusion_counts
            .iter()
            .map(|&c| (c as f64 / self.trials as f64 - p).abs() / sigma)
            .fold(0.0, f64::max)
    }

    pub fn items_outside(&self, k_sigma: f64) -> usize {
        let p = self.expected_frequency();
        let bound = k_sigma * self.sigma();
        self.inclusion_counts
            .iter()
            .filter(|&&c| (c as f64 / self.trials as f64 - p).abs() > bound)
            .count()
    }

    /// Pearson statistic of the inclusion counts against a uniform
    /// expectation, standardised as `(X2 - df) / sqrt(2 df)`.
    pub fn chi_square_z(&self) -> f64 {
        let p = self.expected_frequency();
        let mean = p * self.trials as f64;
        let var = mean * (1.0 - p);
        let x2: f64 = self
            .inclusion_counts
            .iter()
            .map(|&c| (c as f64 - mean).powi(2) / var)
            .sum();
        let df = (self.items - 1) as f64;
        (x2 - df) / (2.0 * df).sqrt()
    }
}

/// Streams items `0..items` through a fresh reservoir of `capacity` in each
/// of `trials` independently seeded trials and counts final membership.
pub fn reservoir_suite(items: usize, capacity: usize, trials: usize, seed: u64) -> Result<ReservoirReport> {
    let start = Instant::now();
    let mut counts = vec![0u32; items];
    let z = [0.0f64];
    for trial in 0..trials {
        let mut rng = Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64);
        let mut buf = ReplayBuffer::<f64>::new(capacity, 1, 1, rng);
        for i in 0..items {
            buf.reservoir_update(&z, i, &z)?;
        }
        for item in buf.items() {
            counts[item.y] += 1;
        }
    }
    Ok(ReservoirReport {
        items,
        capacity,
        trials,
        inclusion_counts: counts,
        elapsed: start.elapsed(),
    })
}
