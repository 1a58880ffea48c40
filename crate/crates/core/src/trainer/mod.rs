//! Sequential training over a task stream with optional replay.
//!
//! A [`MethodSpec`] switches the terms of the step objective on or off:
//!
//! | method  | buffer CE | stored-logit MSE | old-model MSE |
//! |---------|-----------|------------------|---------------|
//! | `sgd`   |           |                  |               |
//! | `joint` |           |                  |               |
//! | `er`    | yes       |                  |               |
//! | `derpp` | yes       | yes (`alpha`)    |               |
//! | `ser`   | yes       | yes (`alpha`)    | yes (`beta`)  |
//!
//! A weighted term whose weight is zero is skipped entirely, including its
//! buffer draw.
//!
//! With the default [`Consistency::PerLogit`] the two squared-logit terms
//! are averaged over output classes as well as rows, so `alpha` and `beta`
//! weight a per-logit squared error.

mod augment;
mod objective;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::buffer::ReplayBuffer;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_both, AccuracyMatrix};
use crate::model::{FrozenModel, ModelParams, DEFAULT_HIDDEN};
use crate::numerics::Matrix;
use crate::rng::{stream_rng, Rng, SeedStream};
use crate::scalar::Scalar;
use crate::scenarios::{ScenarioKind, Split, TaskStream};

pub use augment::{augment, Augmentation};
pub use objective::{composite_loss, StepInputs, StepLoss, StepOutput};

const PROBE_ROWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Sgd,
    Joint,
    Er,
    Derpp,
    Ser,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] = [
        MethodKind::Sgd,
        MethodKind::Joint,
        MethodKind::Er,
        MethodKind::Derpp,
        MethodKind::Ser,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MethodKind::Sgd => "sgd",
            MethodKind::Joint => "joint",
            MethodKind::Er => "er",
            MethodKind::Derpp => "derpp",
            MethodKind::Ser => "ser",
        }
    }

    pub fn uses_buffer(&self) -> bool {
        matches!(self, MethodKind::Er | MethodKind::Derpp | MethodKind::Ser)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (expected sgd, joint, er, derpp or ser)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub kind: MethodKind,
    pub alpha: f64,
    pub beta: f64,
    pub use_buffer_cls: bool,
    pub use_backward: bool,
    pub use_forward: bool,
}

impl MethodSpec {
    pub fn sgd() -> Self {
        Self::plain(MethodKind::Sgd)
    }

    pub fn joint() -> Self {
        Self::plain(MethodKind::Joint)
    }

    pub fn er() -> Self {
        Self {
            use_buffer_cls: true,
            ..Self::plain(MethodKind::Er)
        }
    }

    pub fn derpp(alpha: f64) -> Self {
        Self {
            alpha,
            use_backward: true,
            ..Self::er().with_kind(MethodKind::Derpp)
        }
    }

    pub fn ser(alpha: f64, beta: f64) -> Self {
        Self {
            beta,
            use_forward: true,
            ..Self::derpp(alpha).with_kind(MethodKind::Ser)
        }
    }

    /// Preset for `kind`; weights a method does not use are ignored.
    pub fn from_kind(kind: MethodKind, alpha: f64, beta: f64) -> Self {
        match kind {
            MethodKind::Sgd => Self::sgd(),
            MethodKind::Joint => Self::joint(),
            MethodKind::Er => Self::er(),
            MethodKind::Derpp => Self::derpp(alpha),
            MethodKind::Ser => Self::ser(alpha, beta),
        }
    }

    fn plain(kind: MethodKind) -> Self {
        Self {
            kind,
            alpha: 0.0,
            beta: 0.0,
            use_buffer_cls: false,
            use_backward: false,
            use_forward: false,
        }
    }

    fn with_kind(self, kind: MethodKind) -> Self {
        Self { kind, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "{}: alpha and beta must be finite and non-negative (got {}, {})",
                self.kind, self.alpha, self.beta
            )));
        }
        let flags = (self.use_buffer_cls, self.use_backward, self.use_forward);
        let ok = match self.kind {
            MethodKind::Sgd | MethodKind::Joint => flags == (false, false, false) && self.alpha == 0.0 && self.beta == 0.0,
            MethodKind::Er => flags == (true, false, false) && self.alpha == 0.0 && self.beta == 0.0,
            MethodKind::Derpp => flags == (true, true, false) && self.beta == 0.0,
            MethodKind::Ser => flags == (true, true, true),
        };
        if !ok {
            return Err(Error::Config(format!("inconsistent term flags for method {}", self.kind)));
        }
        Ok(())
    }

    fn backward_active(&self) -> bool {
        self.use_backward && self.alpha > 0.0
    }

    fn forward_active(&self) -> bool {
        self.use_forward && self.beta > 0.0
    }
}

/// How the squared logit distance of the consistency terms is reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consistency {
    /// Mean over rows and classes.
    #[default]
    PerLogit,
    /// Sum over classes, mean over rows.
    PerSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_batch_size: usize,
    pub epochs_per_task: usize,
    /// May be 0, which disables every buffer term.
    pub buffer_capacity: usize,
    pub seed: u64,
    pub augmentation: Augmentation,
    pub consistency: Consistency,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            batch_size: 32,
            buffer_batch_size: 32,
            epochs_per_task: 1,
            buffer_capacity: 500,
            seed: 0,
            augmentation: Augmentation::Identity,
            consistency: Consistency::PerLogit,
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("buffer_batch_size", self.buffer_batch_size),
            ("epochs_per_task", self.epochs_per_task),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Live parameters, replay buffer and random streams of one run.
#[derive(Debug, Clone)]
pub struct Learner<T> {
    params: ModelParams<T>,
    buffer: ReplayBuffer<T>,
    method: MethodSpec,
    cfg: TrainConfig,
    shuffle_rng: Rng,
    augment_rng: Rng,
    steps: u64,
}

impl<T: Scalar> Learner<T> {
    pub fn new(input_dim: usize, num_classes: usize, method: MethodSpec, cfg: TrainConfig) -> Result<Self> {
        method.validate()?;
        cfg.validate()?;
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(num_classes);
        let params = ModelParams::init_with(&sizes, &mut stream_rng(cfg.seed, SeedStream::Init))?;
        Self::with_params(params, method, cfg)
    }

    pub fn with_params(params: ModelParams<T>, method: MethodSpec, cfg: TrainConfig) -> Result<Self> {
        method.validate()?;
        cfg.validate()?;
        let capacity = if method.kind.uses_buffer() { cfg.buffer_capacity } else { 0 };
        let buffer = ReplayBuffer::new(
            capacity,
            params.input_dim(),
            params.num_classes(),
            stream_rng(cfg.seed, SeedStream::Buffer),
        );
        Ok(Self {
            params,
            buffer,
            method,
            shuffle_rng: stream_rng(cfg.seed, SeedStream::Shuffle),
            augment_rng: stream_rng(cfg.seed, SeedStream::Augment),
            cfg,
            steps: 0,
        })
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn into_params(self) -> ModelParams<T> {
        self.params
    }

    pub fn buffer(&self) -> &ReplayBuffer<T> {
        &self.buffer
    }

    pub fn method(&self) -> &MethodSpec {
        &self.method
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Trains on one task for `epochs_per_task` shuffled epochs. `old` is the
    /// frozen model from the end of the previous task, absent for the first.
    pub fn train_task(&mut self, old: Option<&FrozenModel<T>>, train: &Split<T>) -> Result<()> {
        if train.is_empty() {
            return Err(Error::Config("cannot train on an empty task".into()));
        }
        let order: Vec<(u32, u32)> = (0..train.len() as u32).map(|i| (0, i)).collect();
        self.train_pooled(old, &[train], order, self.cfg.epochs_per_task)
    }

    /// Trains on the union of `splits` as one shuffled dataset for
    /// `epochs_per_task * splits.len()` epochs.
    pub fn train_joint(&mut self, splits: &[&Split<T>]) -> Result<()> {
        let order: Vec<(u32, u32)> = splits
            .iter()
            .enumerate()
            .flat_map(|(s, split)| (0..split.len() as u32).map(move |i| (s as u32, i)))
            .collect();
        if order.is_empty() {
            return Err(Error::Config("cannot train on an empty task".into()));
        }
        let epochs = self.cfg.epochs_per_task * splits.len();
        self.train_pooled(None, splits, order, epochs)
    }

    fn train_pooled(
        &mut self,
        old: Option<&FrozenModel<T>>,
        splits: &[&Split<T>],
        mut order: Vec<(u32, u32)>,
        epochs: usize,
    ) -> Result<()> {
        let dim = self.params.input_dim();
        if let Some(s) = splits.iter().find(|s| s.dim() != dim) {
            return Err(Error::dim("train", (s.len(), s.dim()), (0, dim)));
        }
        for _ in 0..epochs {
            order.shuffle(&mut self.shuffle_rng);
            for chunk in order.chunks(self.cfg.batch_size) {
                let mut x = Matrix::zeros(chunk.len(), dim);
                let mut y = Vec::with_capacity(chunk.len());
                for (r, &(s, i)) in chunk.iter().enumerate() {
                    let split = splits[s as usize];
                    split.write_row(i as usize, x.row_mut(r));
                    y.push(split.labels()[i as usize]);
                }
                self.step(old, x, y)?;
            }
        }
        Ok(())
    }

    /// One SGD step on a stream batch followed by reservoir insertion of
    /// every stream sample with its pre-update logits.
    pub fn step(&mut self, old: Option<&FrozenModel<T>>, x: Matrix<T>, y: Vec<usize>) -> Result<StepLoss<T>> {
        let m = self.method;
        let aug = self.cfg.augmentation;
        let have_items = !self.buffer.is_empty();
        let replay = if m.use_buffer_cls && have_items {
            Some(self.buffer.sample_batch(self.cfg.buffer_batch_size)?)
        } else {
            None
        };
        let distill = if m.backward_active() && have_items {
            Some(self.buffer.sample_batch(self.cfg.buffer_batch_size)?)
        } else {
            None
        };

        let x_aug = augment(&x, aug, &mut self.augment_rng)?;
        let replay = match replay {
            Some(b) => Some((augment(&b.x, aug, &mut self.augment_rng)?, b.y)),
            None => None,
        };
        let distill = match distill {
            Some(b) => Some((augment(&b.x, aug, &mut self.augment_rng)?, b.z)),
            None => None,
        };
        let old_logits = match old {
            Some(o) if m.forward_active() => Some(o.forward(&x_aug)?),
            _ => None,
        };

        let inputs = StepInputs {
            x: x_aug,
            y,
            replay,
            distill,
            old_logits,
        };
        let per = match self.cfg.consistency {
            Consistency::PerLogit => 1.0 / self.params.num_classes() as f64,
            Consistency::PerSample => 1.0,
        };
        let out = composite_loss(&self.params, &inputs, T::lit(m.alpha * per), T::lit(m.beta * per))?;
        if !out.loss.total.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }

        // a zero-capacity buffer only counts, so its logits are never read
        let insert_logits = if self.buffer.capacity() == 0 {
            Matrix::zeros(x.rows(), self.params.num_classes())
        } else if aug.is_identity() {
            out.stream_logits
        } else {
            self.params.forward(&x)?
        };

        self.params.sgd_step(&out.grads, T::lit(self.cfg.lr))?;
        self.steps += 1;

        for (r, &label) in inputs.y.iter().enumerate() {
            self.buffer.reservoir_update(x.row(r), label, insert_logits.row(r))?;
        }
        Ok(out.loss)
    }
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome<T> {
    pub params: ModelParams<T>,
    /// Accuracy over all output classes.
    pub accuracy: AccuracyMatrix,
    /// Accuracy with the argmax restricted to each task's classes. Only
    /// produced for streams with disjoint class sets.
    pub task_il: Option<AccuracyMatrix>,
    pub samples_seen: u64,
    pub steps: u64,
}

/// Trains sequentially on every task of `stream`, evaluating all tasks seen
/// so far after each one. Joint training pools every task and evaluates
/// once at the end.
pub fn run_scenario<T: Scalar>(
    stream: &TaskStream<T>,
    method: MethodSpec,
    cfg: &TrainConfig,
) -> Result<ScenarioOutcome<T>> {
    run_scenario_from(stream, method, cfg, None)
}

/// [`run_scenario`] starting from `init` instead of a fresh seeded model.
pub fn run_scenario_from<T: Scalar>(
    stream: &TaskStream<T>,
    method: MethodSpec,
    cfg: &TrainConfig,
    init: Option<ModelParams<T>>,
) -> Result<ScenarioOutcome<T>> {
    stream.validate()?;
    let num_tasks = stream.num_tasks();
    let masked = matches!(stream.kind, ScenarioKind::ClassIl | ScenarioKind::TaskIl);
    let mut learner = match init {
        Some(params) => {
            if params.input_dim() != stream.input_dim() || params.num_classes() != stream.total_classes {
                return Err(Error::dim(
                    "initial parameters",
                    (params.input_dim(), params.num_classes()),
                    (stream.input_dim(), stream.total_classes),
                ));
            }
            Learner::with_params(params, method, cfg.clone())?
        }
        None => Learner::new(stream.input_dim(), stream.total_classes, method, cfg.clone())?,
    };
    let mut accuracy = AccuracyMatrix::new(num_tasks);
    let mut task_il = masked.then(|| AccuracyMatrix::new(num_tasks));
    let mut samples = 0u64;

    if method.kind == MethodKind::Joint {
        let splits: Vec<&Split<T>> = stream.tasks.iter().map(|t| &t.train).collect();
        learner.train_joint(&splits)?;
        samples = splits.iter().map(|s| s.len() as u64).sum::<u64>() * (cfg.epochs_per_task * splits.len()) as u64;
        fill_row(&learner, stream, num_tasks - 1, &mut accuracy, task_il.as_mut())?;
    } else {
        for (t, task) in stream.tasks.iter().enumerate() {
            let old = (t > 0).then(|| learner.params().snapshot());
            let probe = task.train.rows_range(0, task.train.len().min(PROBE_ROWS));
            let before = old.as_ref().map(|o| o.forward(&probe)).transpose()?;
            learner.train_task(old.as_ref(), &task.train)?;
            if let (Some(o), Some(before)) = (&old, before) {
                if o.forward(&probe)? != before {
                    return Err(Error::Invariant(format!("frozen model changed while training task {}", t + 1)));
                }
            }
            samples += task.train.len() as u64 * cfg.epochs_per_task as u64;
            fill_row(&learner, stream, t, &mut accuracy, task_il.as_mut())?;
        }
    }

    if learner.buffer().seen() != samples {
        return Err(Error::Invariant(format!(
            "buffer saw {} samples, stream supplied {samples}",
            learner.buffer().seen()
        )));
    }
    let steps = learner.steps();
    Ok(ScenarioOutcome {
        params: learner.into_params(),
        accuracy,
        task_il,
        samples_seen: samples,
        steps,
    })
}

fn fill_row<T: Scalar>(
    learner: &Learner<T>,
    stream: &TaskStream<T>,
    stage: usize,
    accuracy: &mut AccuracyMatrix,
    mut task_il: Option<&mut AccuracyMatrix>,
) -> Result<()> {
    for (t, task) in stream.tasks.iter().enumerate().take(stage + 1) {
        let mask = task_il.is_some().then_some(&task.class_set);
        let (class_acc, masked_acc) = evaluate_both(learner.params(), &task.test, mask)?;
        if masked_acc.correct < class_acc.correct {
            return Err(Error::Invariant(format!(
                "masked accuracy below unmasked on task {} at stage {}",
                t + 1,
                stage + 1
            )));
        }
        accuracy.set(stage, t, class_acc)?;
        if let Some(m) = task_il.as_deref_mut() {
            m.set(stage, t, masked_acc)?;
        }
    }
    Ok(())
}
