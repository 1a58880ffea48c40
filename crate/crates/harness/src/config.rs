//! Experiment configuration.
//!
//! A config is a TOML file:
//!
//! ```toml
//! [experiment]
//! scenario = "p_mnist"          # p_mnist | r_mnist | split_mnist | synthetic
//! tasks = 20
//! methods = ["sgd", "er", "ser"]
//! buffers = [200, 500]
//! seeds = [0, 1, 2, 3, 4]
//! data_dir = "data/mnist"
//! out_dir = "results"
//!
//! [train]                       # every key optional
//! lr = 0.1
//! batch_size = 32
//! buffer_batch_size = 32
//! epochs_per_task = 1
//! pixel_shift = 0               # 0 disables augmentation
//! consistency = "per_logit"     # per_logit | per_sample
//! hidden = [100, 100]
//!
//! [methods.ser]                 # per-method weights, optional
//! alpha = 1.0
//! beta = 0.3
//!
//! [synthetic]                   # only read for scenario = "synthetic"
//! classes_per_task = 2
//! dim = 20
//! n_per_class = 200
//! separation = 4.0
//! ```
//!
//! Command-line flags override file values. Methods that do not replay
//! (`sgd`, `joint`) run once per seed with buffer size 0.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use ser_core::{Augmentation, Consistency, MethodKind, MethodSpec, SyntheticSpec, TrainConfig};

use crate::error::{io_err, HarnessError, Result};

pub const DATA_DIR_ENV: &str = "SER_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    PMnist,
    RMnist,
    SplitMnist,
    Synthetic,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::PMnist => "p_mnist",
            Scenario::RMnist => "r_mnist",
            Scenario::SplitMnist => "split_mnist",
            Scenario::Synthetic => "synthetic",
        }
    }

    pub fn needs_mnist(&self) -> bool {
        !matches!(self, Scenario::Synthetic)
    }

    pub fn default_tasks(&self) -> usize {
        match self {
            Scenario::PMnist | Scenario::RMnist => 20,
            Scenario::SplitMnist | Scenario::Synthetic => 5,
        }
    }

    /// Default `(alpha, beta)`.
    pub fn default_weights(&self) -> (f64, f64) {
        match self {
            Scenario::PMnist | Scenario::RMnist => (1.0, 0.3),
            Scenario::SplitMnist | Scenario::Synthetic => (0.2, 0.2),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        [Scenario::PMnist, Scenario::RMnist, Scenario::SplitMnist, Scenario::Synthetic]
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| {
                HarnessError::Config(format!(
                    "unknown scenario {s:?} (expected p_mnist, r_mnist, split_mnist or synthetic)"
                ))
            })
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    experiment: RawExperiment,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    methods: BTreeMap<String, RawWeights>,
    #[serde(default)]
    synthetic: RawSynthetic,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    scenario: Option<String>,
    tasks: Option<usize>,
    methods: Option<Vec<String>>,
    buffers: Option<Vec<usize>>,
    seeds: Option<Vec<u64>>,
    data_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    lr: Option<f64>,
    batch_size: Option<usize>,
    buffer_batch_size: Option<usize>,
    epochs_per_task: Option<usize>,
    pixel_shift: Option<usize>,
    consistency: Option<Consistency>,
    hidden: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWeights {
    alpha: Option<f64>,
    beta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSynthetic {
    classes_per_task: Option<usize>,
    dim: Option<usize>,
    n_per_class: Option<usize>,
    separation: Option<f64>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenario: Option<Scenario>,
    pub tasks: Option<usize>,
    pub methods: Vec<MethodKind>,
    pub buffers: Vec<usize>,
    pub seeds: Option<Vec<u64>>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub num_tasks: usize,
    pub methods: Vec<MethodSpec>,
    pub buffers: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Seed and buffer capacity are filled in per cell.
    pub train: TrainConfig,
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub synthetic: SyntheticSpec,
}

/// One `(method, buffer, seed)` run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub method: MethodSpec,
    pub buffer: usize,
    pub seed: u64,
}

impl Cell {
    pub fn stem(&self) -> String {
        format!("{}_buf{}_seed{}", self.method.kind, self.buffer, self.seed)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Parse {
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })
    }

    pub fn parse(text: &str, overrides: &Overrides) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let exp = raw.experiment;

        let scenario = match (overrides.scenario, exp.scenario) {
            (Some(s), _) => s,
            (None, Some(s)) => s.parse()?,
            (None, None) => return Err(HarnessError::Config("experiment.scenario is required".into())),
        };
        let num_tasks = overrides.tasks.or(exp.tasks).unwrap_or(scenario.default_tasks());
        if num_tasks == 0 {
            return Err(HarnessError::Config("tasks must be positive".into()));
        }
        if scenario == Scenario::SplitMnist && 10 % num_tasks != 0 {
            return Err(HarnessError::Config(format!(
                "split_mnist needs a task count dividing 10, got {num_tasks}"
            )));
        }

        let kinds: Vec<MethodKind> = if !overrides.methods.is_empty() {
            overrides.methods.clone()
        } else {
            exp.methods
                .ok_or_else(|| HarnessError::Config("experiment.methods is required".into()))?
                .iter()
                .map(|m| m.parse::<MethodKind>())
                .collect::<Result<_, _>>()?
        };
        if kinds.is_empty() {
            return Err(HarnessError::Config("at least one method is required".into()));
        }
        for name in raw.methods.keys() {
            name.parse::<MethodKind>()?;
        }
        let (alpha0, beta0) = scenario.default_weights();
        let mut methods = Vec::new();
        for kind in kinds {
            let w = raw.methods.get(kind.as_str());
            let alpha = w.and_then(|w| w.alpha).unwrap_or(alpha0);
            let beta = w.and_then(|w| w.beta).unwrap_or(beta0);
            let spec = MethodSpec::from_kind(kind, alpha, beta);
            spec.validate()?;
            if !methods.contains(&spec) {
                methods.push(spec);
            }
        }

        let buffers = if !overrides.buffers.is_empty() {
            overrides.buffers.clone()
        } else {
            exp.buffers.unwrap_or_default()
        };
        if methods.iter().any(|m| m.kind.uses_buffer()) && buffers.is_empty() {
            return Err(HarnessError::Config("replay methods need at least one buffer size".into()));
        }

        let seeds = overrides.seeds.clone().or(exp.seeds).unwrap_or_default();
        if seeds.is_empty() {
            return Err(HarnessError::Config("at least one seed is required".into()));
        }

        let t = raw.train;
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            lr: t.lr.unwrap_or(defaults.lr),
            batch_size: t.batch_size.unwrap_or(defaults.batch_size),
            buffer_batch_size: t.buffer_batch_size.unwrap_or(defaults.buffer_batch_size),
            epochs_per_task: t.epochs_per_task.unwrap_or(defaults.epochs_per_task),
            augmentation: match t.pixel_shift {
                None | Some(0) => Augmentation::Identity,
                Some(k) => Augmentation::PixelShift(k),
            },
            consistency: t.consistency.unwrap_or(defaults.consistency),
            hidden: t.hidden.unwrap_or(defaults.hidden),
            ..defaults
        };
        train.validate()?;

        let s = raw.synthetic;
        let sd = SyntheticSpec::default();
        let synthetic = SyntheticSpec {
            num_tasks,
            classes_per_task: s.classes_per_task.unwrap_or(sd.classes_per_task),
            dim: s.dim.unwrap_or(sd.dim),
            n_per_class: s.n_per_class.unwrap_or(sd.n_per_class),
            separation: s.separation.unwrap_or(sd.separation),
        };

        let data_dir = overrides
            .data_dir
            .clone()
            .or(exp.data_dir)
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from));
        if scenario.needs_mnist() && data_dir.is_none() {
            return Err(HarnessError::Config(format!(
                "{scenario} needs MNIST: pass --data-dir, set experiment.data_dir or set {DATA_DIR_ENV}"
            )));
        }
        let out_dir = overrides
            .out_dir
            .clone()
            .or(exp.out_dir)
            .unwrap_or_else(|| PathBuf::from("results"));

        Ok(Self {
            scenario,
            num_tasks,
            methods,
            buffers,
            seeds,
            train,
            data_dir,
            out_dir,
            synthetic,
        })
    }

    /// Every run in a fixed order: seed, then method, then buffer.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &seed in &self.seeds {
            for &method in &self.methods {
                if method.kind.uses_buffer() {
                    for &buffer in &self.buffers {
                        cells.push(Cell { method, buffer, seed });
                    }
                } else {
                    cells.push(Cell { method, buffer: 0, seed });
                }
            }
        }
        cells.dedup_by(|a, b| a.stem() == b.stem());
        cells
    }

    pub fn scenario_dir(&self) -> PathBuf {
        self.out_dir.join(self.scenario.as_str())
    }

    pub fn cell_config(&self, cell: &Cell) -> TrainConfig {
        TrainConfig {
            seed: cell.seed,
            buffer_capacity: cell.buffer,
            ..self.train.clone()
        }
    }
}
