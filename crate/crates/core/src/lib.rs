//! Continual-learning engine: a small ReLU classifier trained from scratch
//! on task streams, a reservoir replay buffer, and replay objectives that
//! combine cross-entropy with logit distillation against stored and
//! previous-model outputs.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases at
//! the bottom of this file fix the type used by experiments.

pub mod buffer;
pub mod diagnostics;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod scalar;
pub mod scenarios;
pub mod trainer;

pub use buffer::{BufferItem, ReplayBatch, ReplayBuffer};
pub use error::{Error, Result};
pub use metrics::{
    average_accuracy, average_forgetting, evaluate, evaluate_both, Accuracy, AccuracyMatrix, AccuracyTable,
    Forgetting, MetricsSummary,
};
pub use model::{FrozenModel, Gradients, ModelParams};
pub use numerics::Matrix;
pub use rng::{stream_rng, stream_seed, SeedStream};
pub use scalar::Scalar;
pub use scenarios::{ScenarioKind, Split, SyntheticSpec, TaskDataset, TaskStream};
pub use trainer::{run_scenario, run_scenario_from, Augmentation, Consistency, Learner, MethodKind, MethodSpec, ScenarioOutcome, TrainConfig};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Model64 = ModelParams<f64>;
pub type Model32 = ModelParams<f32>;
pub type Buffer64 = ReplayBuffer<f64>;
pub type Stream64 = TaskStream<f64>;
pub type Learner64 = Learner<f64>;
pub type Outcome64 = ScenarioOutcome<f64>;
