//! Mean and sample standard deviation across seeds, recomputed from the
//! per-seed JSON files of one scenario directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use ser_core::{MethodKind, MetricsSummary};

use crate::error::{io_err, HarnessError, Result};
use crate::output::write_atomic;

pub const AGGREGATE_JSON: &str = "aggregate.json";
pub const AGGREGATE_TXT: &str = "aggregate.txt";

/// Accuracy points by which a continual method may exceed the joint
/// baseline before it counts as a violation.
pub const JOINT_SLACK: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator); 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub buffer: usize,
    pub seeds: Vec<u64>,
    pub average_accuracy: Stat,
    pub average_forgetting: Option<Stat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_il_average_accuracy: Option<Stat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_il_average_forgetting: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenario: String,
    pub rows: Vec<AggregateRow>,
}

impl Aggregate {
    pub fn row(&self, method: &str, buffer: usize) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.method == method && r.buffer == buffer)
    }
}

pub fn summary_json(summary: &MetricsSummary) -> Result<String> {
    let mut s = serde_json::to_string_pretty(summary).map_err(|e| HarnessError::Invariant(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn read_summary(path: &Path) -> Result<MetricsSummary> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn method_rank(name: &str) -> usize {
    name.parse::<MethodKind>().map_or(usize::MAX, |k| k as usize)
}

/// Every per-seed summary in `dir` for `scenario`, sorted by method,
/// buffer and seed.
pub fn collect_summaries(dir: &Path, scenario: &str) -> Result<Vec<MetricsSummary>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let is_json = path.extension().is_some_and(|e| e == "json");
        let is_aggregate = path.file_name().is_some_and(|n| n == AGGREGATE_JSON);
        if !is_json || is_aggregate {
            continue;
        }
        let summary = read_summary(&path)?;
        if summary.scenario == scenario {
            out.push(summary);
        }
    }
    out.sort_by(|a, b| {
        (method_rank(&a.method), a.buffer, a.seed).cmp(&(method_rank(&b.method), b.buffer, b.seed))
    });
    Ok(out)
}

pub fn aggregate(scenario: &str, summaries: &[MetricsSummary]) -> Aggregate {
    let mut groups: BTreeMap<(usize, usize, String), Vec<&MetricsSummary>> = BTreeMap::new();
    for s in summaries {
        groups
            .entry((method_rank(&s.method), s.buffer, s.method.clone()))
            .or_default()
            .push(s);
    }
    let rows = groups
        .into_iter()
        .map(|((_, buffer, method), mut runs)| {
            runs.sort_by_key(|s| s.seed);
            let pick = |f: &dyn Fn(&MetricsSummary) -> Option<f64>| -> Option<Stat> {
                let vals: Option<Vec<f64>> = runs.iter().map(|s| f(s)).collect();
                vals.and_then(|v| Stat::of(&v))
            };
            AggregateRow {
                method,
                buffer,
                seeds: runs.iter().map(|s| s.seed).collect(),
                average_accuracy: pick(&|s| Some(s.average_accuracy)).expect("group is non-empty"),
                average_forgetting: pick(&|s| s.forgetting_defined.then_some(s.average_forgetting)),
                task_il_average_accuracy: pick(&|s| s.task_il_average_accuracy),
                task_il_average_forgetting: pick(&|s| s.task_il_average_forgetting),
            }
        })
        .collect();
    Aggregate {
        scenario: scenario.to_string(),
        rows,
    }
}

fn pct(s: &Option<Stat>) -> String {
    match s {
        Some(s) => format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std),
        None => "-".to_string(),
    }
}

/// Plain-text table: one row per method and buffer, accuracies in percent.
pub fn render_table(agg: &Aggregate) -> String {
    let task_il = agg.rows.iter().any(|r| r.task_il_average_accuracy.is_some());
    let mut header = vec!["Buffer", "Method", "Accuracy", "Forgetting"];
    if task_il {
        header.extend(["Task-IL accuracy", "Task-IL forgetting"]);
    }
    let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in &agg.rows {
        let mut line = vec![
            if r.buffer == 0 { "-".to_string() } else { r.buffer.to_string() },
            r.method.clone(),
            pct(&Some(r.average_accuracy.clone())),
            pct(&r.average_forgetting),
        ];
        if task_il {
            line.push(pct(&r.task_il_average_accuracy));
            line.push(pct(&r.task_il_average_forgetting));
        }
        lines.push(line);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = format!("scenario: {}\n", agg.scenario);
    for l in &lines {
        let cells: Vec<String> = l
            .iter()
            .zip(&widths)
            .map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

/// Recomputes the aggregate of `dir` and writes `aggregate.json` and
/// `aggregate.txt` next to the per-seed files.
pub fn write_aggregate(dir: &Path, scenario: &str) -> Result<Aggregate> {
    let summaries = collect_summaries(dir, scenario)?;
    let agg = aggregate(scenario, &summaries);
    let mut json = serde_json::to_string_pretty(&agg).map_err(|e| HarnessError::Invariant(e.to_string()))?;
    json.push('\n');
    write_atomic(&dir.join(AGGREGATE_JSON), json.as_bytes())?;
    write_atomic(&dir.join(AGGREGATE_TXT), render_table(&agg).as_bytes())?;
    Ok(agg)
}

/// Runs that beat the joint run of the same seed by more than `slack`.
pub fn joint_violations(summaries: &[MetricsSummary], slack: f64) -> Vec<String> {
    let mut out = Vec::new();
    for joint in summaries.iter().filter(|s| s.method == "joint") {
        for s in summaries
            .iter()
            .filter(|s| s.method != "joint" && s.seed == joint.seed && s.scenario == joint.scenario)
        {
            if s.average_accuracy > joint.average_accuracy + slack {
                out.push(format!(
                    "{} buffer {} seed {} reaches {:.4}, above the joint run's {:.4}",
                    s.method, s.buffer, s.seed, s.average_accuracy, joint.average_accuracy
                ));
            }
        }
    }
    out
}
