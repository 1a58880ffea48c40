use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use ser_core::model::{read_checkpoint, write_checkpoint};
use ser_core::scenarios::{self, Mnist, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS};
use ser_core::{
    average_accuracy, average_forgetting, run_scenario_from, stream_seed, MetricsSummary, Model64, SeedStream,
    Stream64,
};

use crate::aggregate::{self, Aggregate};
use crate::config::{Cell, ExperimentConfig, Scenario};
use crate::error::{io_err, HarnessError, Result};
use crate::output::write_atomic;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Recompute cells whose outputs already exist.
    pub force: bool,
    /// Worker threads; 0 or 1 runs cells one after another.
    pub jobs: usize,
    /// Also write the final parameters of each cell.
    pub save_params: bool,
    /// Start every cell from these parameters instead of a seeded init.
    pub init_params: Option<PathBuf>,
    pub quiet: bool,
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: Cell,
    pub summary: MetricsSummary,
    pub skipped: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub cells: Vec<CellOutcome>,
    pub aggregate: Aggregate,
    /// Runs that exceed the joint baseline of their seed by more than
    /// [`aggregate::JOINT_SLACK`].
    pub joint_violations: Vec<String>,
}

/// Output files of one cell.
#[derive(Debug, Clone)]
pub struct CellPaths {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub task_il_csv: PathBuf,
    pub params: PathBuf,
}

impl CellPaths {
    pub fn new(dir: &Path, cell: &Cell) -> Self {
        let stem = cell.stem();
        Self {
            csv: dir.join(format!("{stem}.csv")),
            json: dir.join(format!("{stem}.json")),
            task_il_csv: dir.join(format!("{stem}.taskil.csv")),
            params: dir.join(format!("{stem}.params")),
        }
    }

    fn complete(&self) -> bool {
        self.csv.is_file() && self.json.is_file()
    }
}

pub fn load_mnist(dir: &Path) -> Result<Mnist> {
    for name in [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS] {
        let raw = dir.join(name);
        let gz = dir.join(format!("{name}.gz"));
        if !raw.is_file() && !gz.is_file() {
            return Err(HarnessError::MissingData { dir: dir.to_path_buf() });
        }
    }
    Ok(Mnist::load_dir(dir)?)
}

/// Builds the task stream a seed trains on.
pub fn build_stream(cfg: &ExperimentConfig, mnist: Option<&Mnist>, seed: u64) -> Result<Stream64> {
    let scenario_seed = stream_seed(seed, SeedStream::Scenario);
    let need = || mnist.ok_or_else(|| HarnessError::Config(format!("{} needs MNIST data", cfg.scenario)));
    let stream = match cfg.scenario {
        Scenario::PMnist => scenarios::permuted_mnist(need()?, cfg.num_tasks, scenario_seed)?,
        Scenario::RMnist => scenarios::rotated_mnist(need()?, cfg.num_tasks, scenario_seed)?,
        Scenario::SplitMnist => scenarios::split_mnist(need()?, cfg.num_tasks)?,
        Scenario::Synthetic => scenarios::synthetic_gaussian(cfg.synthetic, scenario_seed)?,
    };
    Ok(stream)
}

pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    let mnist = if cfg.scenario.needs_mnist() {
        let dir = cfg
            .data_dir
            .as_deref()
            .ok_or_else(|| HarnessError::Config("no data directory".into()))?;
        Some(load_mnist(dir)?)
    } else {
        None
    };
    let init = match &opts.init_params {
        Some(path) => {
            let file = std::fs::File::open(path).map_err(io_err(path))?;
            Some(read_checkpoint::<f64, _>(std::io::BufReader::new(file))?)
        }
        None => None,
    };

    let dir = cfg.scenario_dir();
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let cells = cfg.cells();

    let mut streams = BTreeMap::new();
    for &seed in &cfg.seeds {
        streams.insert(seed, Arc::new(build_stream(cfg, mnist.as_ref(), seed)?));
    }

    let total = cells.len();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<CellOutcome>>>> = Mutex::new((0..total).map(|_| None).collect());
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= total {
            break;
        }
        let cell = cells[i];
        let out = run_cell(cfg, &streams[&cell.seed], &cell, &dir, opts, init.clone());
        if let Ok(o) = &out {
            if !opts.quiet {
                eprintln!(
                    "[{}/{total}] {} {}: accuracy {:.2}{} ({})",
                    i + 1,
                    cfg.scenario,
                    cell.stem(),
                    100.0 * o.summary.average_accuracy,
                    if o.summary.forgetting_defined {
                        format!(", forgetting {:.2}", 100.0 * o.summary.average_forgetting)
                    } else {
                        String::new()
                    },
                    if o.skipped { "cached".to_string() } else { format!("{:.1}s", o.seconds) }
                );
            }
        }
        let failed = out.is_err();
        results.lock().expect("result slots")[i] = Some(out);
        if failed {
            // stop handing out new cells
            next.store(total, Ordering::SeqCst);
        }
    };
    let jobs = opts.jobs.clamp(1, total.max(1));
    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(worker);
            }
        });
    }

    let mut outcomes = Vec::with_capacity(total);
    for slot in results.into_inner().expect("result slots") {
        match slot {
            Some(Ok(o)) => outcomes.push(o),
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }

    let aggregate = aggregate::write_aggregate(&dir, cfg.scenario.as_str())?;
    let summaries: Vec<MetricsSummary> = outcomes.iter().map(|o| o.summary.clone()).collect();
    let joint_violations = aggregate::joint_violations(&summaries, aggregate::JOINT_SLACK);
    Ok(RunReport {
        cells: outcomes,
        aggregate,
        joint_violations,
    })
}

fn run_cell(
    cfg: &ExperimentConfig,
    stream: &Stream64,
    cell: &Cell,
    dir: &Path,
    opts: &RunOptions,
    init: Option<Model64>,
) -> Result<CellOutcome> {
    let paths = CellPaths::new(dir, cell);
    if !opts.force && paths.complete() {
        let summary = aggregate::read_summary(&paths.json)?;
        return Ok(CellOutcome {
            cell: *cell,
            summary,
            skipped: true,
            seconds: 0.0,
        });
    }

    let start = Instant::now();
    let train = cfg.cell_config(cell);
    let outcome = run_scenario_from(stream, cell.method, &train, init)?;
    let mut summary = MetricsSummary::from_matrix(
        cell.method.kind.as_str(),
        cfg.scenario.as_str(),
        cell.buffer,
        cell.seed,
        &outcome.accuracy,
    )?;
    if let Some(task_il) = &outcome.task_il {
        summary.task_il_average_accuracy = Some(average_accuracy(task_il)?);
        let f = average_forgetting(task_il)?;
        summary.task_il_average_forgetting = f.defined.then_some(f.value);
        write_atomic(&paths.task_il_csv, task_il.to_csv().as_bytes())?;
    }
    if opts.save_params {
        let mut bytes = Vec::new();
        write_checkpoint(&outcome.params, &mut bytes)?;
        write_atomic(&paths.params, &bytes)?;
    }
    write_atomic(&paths.csv, outcome.accuracy.to_csv().as_bytes())?;
    // the JSON goes last: its presence marks the cell complete
    write_atomic(&paths.json, aggregate::summary_json(&summary)?.as_bytes())?;
    Ok(CellOutcome {
        cell: *cell,
        summary,
        skipped: false,
        seconds: start.elapsed().as_secs_f64(),
    })
}
