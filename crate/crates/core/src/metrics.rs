//! Accuracy bookkeeping, average accuracy and average forgetting.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;
use crate::scenarios::Split;

const EVAL_CHUNK: usize = 2048;

/// Exact `correct / total` count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: u64,
    pub total: u64,
}

impl Accuracy {
    pub fn value(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Test accuracy of `params` on `split`. With a mask the argmax is
/// restricted to the masked classes (task identity given); without one it
/// ranges over every output.
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    split: &Split<T>,
    mask: Option<&BTreeSet<usize>>,
) -> Result<Accuracy> {
    let (unmasked, masked) = evaluate_both(params, split, mask)?;
    Ok(if mask.is_some() { masked } else { unmasked })
}

/// Unmasked and masked accuracy from a single pass over the test rows. When
/// `mask` is `None` both results are the unmasked accuracy.
pub fn evaluate_both<T: Scalar>(
    params: &ModelParams<T>,
    split: &Split<T>,
    mask: Option<&BTreeSet<usize>>,
) -> Result<(Accuracy, Accuracy)> {
    if split.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let classes = params.num_classes();
    let allowed: Option<Vec<usize>> = mask.map(|m| m.iter().copied().filter(|&c| c < classes).collect());
    if matches!(&allowed, Some(a) if a.is_empty()) {
        return Err(Error::Config("task mask selects no output class".into()));
    }

    let mut hit_all = 0u64;
    let mut hit_masked = 0u64;
    let labels = split.labels();
    let mut start = 0;
    while start < split.len() {
        let end = (start + EVAL_CHUNK).min(split.len());
        let logits = params.forward(&split.rows_range(start, end))?;
        for (r, &pred) in logits.argmax_rows().iter().enumerate() {
            let y = labels[start + r];
            if pred == y {
                hit_all += 1;
            }
            let masked_pred = match &allowed {
                Some(a) => {
                    let row = logits.row(r);
                    let mut best = a[0];
                    for &c in &a[1..] {
                        if row[c] > row[best] {
                            best = c;
                        }
                    }
                    best
                }
                None => pred,
            };
            if masked_pred == y {
                hit_masked += 1;
            }
        }
        start = end;
    }
    let total = split.len() as u64;
    Ok((
        Accuracy {
            correct: hit_all,
            total,
        },
        Accuracy {
            correct: hit_masked,
            total,
        },
    ))
}

/// Lower-triangular grid: entry `(stage, task)` is the accuracy on `task`
/// after training through `stage` (both 0-based, `task <= stage`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    num_tasks: usize,
    cells: Vec<Vec<Option<Accuracy>>>,
}

impl AccuracyMatrix {
    pub fn new(num_tasks: usize) -> Self {
        Self {
            num_tasks,
            cells: (0..num_tasks).map(|i| vec![None; i + 1]).collect(),
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn set(&mut self, stage: usize, task: usize, acc: Accuracy) -> Result<()> {
        if stage >= self.num_tasks || task > stage {
            return Err(Error::Invariant(format!(
                "accuracy cell ({stage}, {task}) outside the lower triangle of {} tasks",
                self.num_tasks
            )));
        }
        if acc.total == 0 || acc.correct > acc.total {
            return Err(Error::Invariant(format!("invalid accuracy {}/{}", acc.correct, acc.total)));
        }
        self.cells[stage][task] = Some(acc);
        Ok(())
    }

    pub fn get(&self, stage: usize, task: usize) -> Option<Accuracy> {
        self.cells.get(stage).and_then(|row| row.get(task)).copied().flatten()
    }

    pub fn value(&self, stage: usize, task: usize) -> Option<f64> {
        self.get(stage, task).map(|a| a.value())
    }

    /// Values of row `stage`, or `None` if any entry is missing.
    pub fn row_values(&self, stage: usize) -> Option<Vec<f64>> {
        self.cells.get(stage)?.iter().map(|c| c.map(|a| a.value())).collect()
    }

    /// Average accuracy over tasks `0..=stage` after training `stage`.
    pub fn stage_average(&self, stage: usize) -> Option<f64> {
        self.row_values(stage).map(|v| mean(&v))
    }

    pub fn final_row(&self) -> Option<Vec<f64>> {
        self.row_values(self.num_tasks.checked_sub(1)?)
    }

    /// One line per stage, one column per task, blank cells above the
    /// diagonal and for unevaluated entries.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage");
        for t in 1..=self.num_tasks {
            let _ = write!(out, ",task_{t}");
        }
        out.push('\n');
        for i in 0..self.num_tasks {
            let _ = write!(out, "{}", i + 1);
            for t in 0..self.num_tasks {
                out.push(',');
                if let Some(v) = self.value(i, t) {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Values read back from [`AccuracyMatrix::to_csv`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTable {
    pub rows: Vec<Vec<Option<f64>>>,
}

impl AccuracyTable {
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Config("empty accuracy CSV".into()))?;
        let width = header.split(',').count() - 1;
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != width + 1 {
                return Err(Error::Config(format!("accuracy CSV line {} has {} fields", n + 2, fields.len())));
            }
            let row = fields[1..]
                .iter()
                .map(|f| {
                    let f = f.trim();
                    if f.is_empty() {
                        Ok(None)
                    } else {
                        f.parse::<f64>()
                            .map(Some)
                            .map_err(|e| Error::Config(format!("bad accuracy value {f:?}: {e}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { rows })
    }

    /// Average accuracy over tasks `0..=stage`, if all are present.
    pub fn stage_average(&self, stage: usize) -> Option<f64> {
        let vals: Option<Vec<f64>> = self.rows.get(stage)?.iter().take(stage + 1).copied().collect();
        vals.map(|v| mean(&v))
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean of the final row.
pub fn average_accuracy(m: &AccuracyMatrix) -> Result<f64> {
    m.final_row()
        .map(|v| mean(&v))
        .ok_or_else(|| Error::Invariant("final accuracy row is incomplete".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Forgetting {
    pub value: f64,
    /// False when there is no earlier stage to forget from; `value` is then 0.
    pub defined: bool,
}

/// Mean over tasks `t < T` of the largest drop from an earlier-stage
/// accuracy on `t` to its final accuracy. Only populated earlier stages
/// (`t <= i < T`) take part in the max.
pub fn average_forgetting(m: &AccuracyMatrix) -> Result<Forgetting> {
    let t_final = m.num_tasks();
    if t_final < 2 {
        return Ok(Forgetting {
            value: 0.0,
            defined: false,
        });
    }
    let last = t_final - 1;
    let mut drops = Vec::with_capacity(last);
    for t in 0..last {
        let final_acc = m
            .value(last, t)
            .ok_or_else(|| Error::Invariant("final accuracy row is incomplete".into()))?;
        let best = (t..last)
            .filter_map(|i| m.value(i, t))
            .map(|a| a - final_acc)
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
        if let Some(d) = best {
            drops.push(d);
        }
    }
    if drops.is_empty() {
        return Ok(Forgetting {
            value: 0.0,
            defined: false,
        });
    }
    Ok(Forgetting {
        value: mean(&drops),
        defined: true,
    })
}

/// Per-run result record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub method: String,
    pub scenario: String,
    pub buffer: usize,
    pub seed: u64,
    pub average_accuracy: f64,
    pub average_forgetting: f64,
    pub forgetting_defined: bool,
    pub per_task_final: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_il_average_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_il_average_forgetting: Option<f64>,
}

impl MetricsSummary {
    pub fn from_matrix(method: &str, scenario: &str, buffer: usize, seed: u64, m: &AccuracyMatrix) -> Result<Self> {
        let forgetting = average_forgetting(m)?;
        Ok(Self {
            method: method.to_string(),
            scenario: scenario.to_string(),
            buffer,
            seed,
            average_accuracy: average_accuracy(m)?,
            average_forgetting: forgetting.value,
            forgetting_defined: forgetting.defined,
            per_task_final: m.final_row().unwrap_or_default(),
            task_il_average_accuracy: None,
            task_il_average_forgetting: None,
        })
    }
}
