//! Fully-connected classifier: affine -> ReLU -> affine -> ReLU -> affine.
//!
//! The network outputs raw logits over a single shared head. Gradients are
//! composed at the logits: callers add up the logit-gradients of every loss
//! term evaluated on a batch and run one backward pass.

mod checkpoint;

use std::sync::Arc;

use rand::Rng as _;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::numerics::{affine_backward, affine_forward, relu_backward, relu_forward, sgd_update, Matrix};
use crate::rng::Rng;
use crate::scalar::Scalar;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

/// Hidden widths of the default MNIST classifier.
pub const DEFAULT_HIDDEN: [usize; 2] = [100, 100];

/// One affine layer: `weight` is `in x out`, `bias` is `1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Matrix<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(inputs, outputs),
            bias: Matrix::zeros(1, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }
}

/// Parameters of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    layers: Vec<Dense<T>>,
    version: u64,
}

/// Parameter-shaped gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Dense<T>>,
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Input fed to each affine layer.
    inputs: Vec<Matrix<T>>,
    /// Pre-ReLU activations of the hidden layers.
    pre_activations: Vec<Matrix<T>>,
    logits: Matrix<T>,
}

impl<T> ForwardCache<T> {
    pub fn logits(&self) -> &Matrix<T> {
        &self.logits
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Default architecture `[input_dim, 100, 100, num_classes]`.
    pub fn init(input_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        let mut rng = Rng::seed_from_u64(seed);
        Self::init_with(&[input_dim, DEFAULT_HIDDEN[0], DEFAULT_HIDDEN[1], num_classes], &mut rng)
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn init_with(layer_sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Dense {
                    weight: Matrix::from_fn(w[0], w[1], |_, _| T::lit(rng.random_range(-bound..bound))),
                    bias: Matrix::zeros(1, w[1]),
                }
            })
            .collect();
        Ok(Self { layers, version: 0 })
    }

    pub fn zeroed(layer_sizes: &[usize]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        Ok(Self {
            layers: layer_sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            version: 0,
        })
    }

    pub fn from_layers(layers: Vec<Dense<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("a model needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.shape() != (1, l.outputs()) {
                return Err(Error::dim("layer bias", l.bias.shape(), (1, l.outputs())));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.inputs() != l.outputs() {
                    return Err(Error::dim("layer chain", l.weight.shape(), next.weight.shape()));
                }
            }
        }
        Ok(Self { layers, version: 0 })
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    /// Direct mutable access for tests and diagnostics. Does not bump the
    /// version counter.
    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs())
            .chain(self.layers.iter().map(Dense::outputs))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// Number of SGD steps applied since construction.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.data().len())
            .sum()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = affine_forward(x, &self.layers[0].weight, &self.layers[0].bias)?;
        for layer in &self.layers[1..] {
            h = affine_forward(&relu_forward(&h), &layer.weight, &layer.bias)?;
        }
        debug_assert_eq!(h.cols(), self.layers[last].outputs());
        Ok(h)
    }

    pub fn forward_cached(&self, x: &Matrix<T>) -> Result<ForwardCache<T>> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len() - 1);
        let mut current = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = affine_forward(&current, &layer.weight, &layer.bias)?;
            inputs.push(current);
            if i + 1 == self.layers.len() {
                return Ok(ForwardCache {
                    inputs,
                    pre_activations,
                    logits: z,
                });
            }
            current = relu_forward(&z);
            pre_activations.push(z);
        }
        unreachable!("model has at least one layer")
    }

    /// Gradient of `sum(logits * logit_grads)` with respect to every
    /// parameter, reusing the activations in `cache`.
    pub fn backward(&self, cache: &ForwardCache<T>, logit_grads: &Matrix<T>) -> Result<Gradients<T>> {
        if logit_grads.shape() != cache.logits.shape() {
            return Err(Error::dim("backward", logit_grads.shape(), cache.logits.shape()));
        }
        let mut grads: Vec<Dense<T>> = Vec::with_capacity(self.layers.len());
        let mut upstream = logit_grads.clone();
        for i in (0..self.layers.len()).rev() {
            let g = affine_backward(&cache.inputs[i], &self.layers[i].weight, &upstream)?;
            grads.push(Dense {
                weight: g.dw,
                bias: g.db,
            });
            if i > 0 {
                upstream = relu_backward(&cache.pre_activations[i - 1], &g.dx)?;
            }
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    pub fn forward_backward(&self, x: &Matrix<T>, logit_grads: &Matrix<T>) -> Result<Gradients<T>> {
        let cache = self.forward_cached(x)?;
        self.backward(&cache, logit_grads)
    }

    /// Applies `p <- p - lr * g` to every parameter and bumps the version.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: T) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "{} gradient layers for {} model layers",
                grads.layers.len(),
                self.layers.len()
            )));
        }
        for (p, g) in self.layers.iter().zip(&grads.layers) {
            p.weight.ensure_same_shape(&g.weight, "sgd_step")?;
            p.bias.ensure_same_shape(&g.bias, "sgd_step")?;
        }
        for (p, g) in self.layers.iter_mut().zip(&grads.layers) {
            sgd_update(&mut p.weight, &g.weight, lr)?;
            sgd_update(&mut p.bias, &g.bias, lr)?;
        }
        self.version += 1;
        Ok(())
    }

    /// Frozen deep copy; later updates to `self` never reach it.
    pub fn snapshot(&self) -> FrozenModel<T> {
        FrozenModel(Arc::new(self.clone()))
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.is_finite() && l.bias.is_finite())
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim("forward", x.shape(), self.layers[0].weight.shape()));
        }
        Ok(())
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(Error::Config(format!("invalid layer sizes {layer_sizes:?}")));
    }
    Ok(())
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &ModelParams<T>) -> Self {
        Self {
            layers: params.layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                Ok(Dense {
                    weight: a.weight.add(&b.weight)?,
                    bias: a.bias.add(&b.bias)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        let mut worst = T::zero();
        for (a, b) in self.layers.iter().zip(&other.layers) {
            worst = worst.max(a.weight.max_abs_diff(&b.weight)?);
            worst = worst.max(a.bias.max_abs_diff(&b.bias)?);
        }
        Ok(worst)
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.data().iter().chain(l.bias.data()).all(|v| *v == T::zero())
        })
    }
}

/// Read-only handle to a parameter snapshot, used as the previous-task
/// model. Cloning shares the same snapshot.
#[derive(Debug, Clone)]
pub struct FrozenModel<T>(Arc<ModelParams<T>>);

impl<T: Scalar> FrozenModel<T> {
    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.0.forward(x)
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.0
    }

    pub fn snapshot(&self) -> FrozenModel<T> {
        self.clone()
    }

    /// Mutable copy that starts from this snapshot.
    pub fn thaw(&self) -> ModelParams<T> {
        (*self.0).clone()
    }
}
