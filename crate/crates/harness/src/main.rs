use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use ser_core::MethodKind;
use ser_harness::check::run_checks;
use ser_harness::curves::emit_curves;
use ser_harness::{run, ExperimentConfig, Overrides, RunOptions, Scenario};

#[derive(Parser)]
#[command(name = "ser", version, about = "Continual-learning experiments with replay and logit consistency")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (method, buffer, seed) cell of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenario: Option<Scenario>,
        /// Number of tasks in the stream.
        #[arg(long)]
        tasks: Option<usize>,
        #[arg(long = "method")]
        methods: Vec<MethodKind>,
        #[arg(long = "buffer")]
        buffers: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Directory with the four MNIST IDX files (falls back to SER_DATA_DIR).
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Recompute cells that already have outputs.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Write each cell's final parameters next to its results.
        #[arg(long)]
        save: bool,
        /// Start every cell from a saved parameter file.
        #[arg(long)]
        load: Option<PathBuf>,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Average-accuracy curves across seeds as one wide CSV.
    Curves {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Gradient and reservoir self-tests.
    Check,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Run {
            config,
            scenario,
            tasks,
            methods,
            buffers,
            seeds,
            data_dir,
            out_dir,
            force,
            jobs,
            save,
            load,
            quiet,
        } => {
            let overrides = Overrides {
                scenario,
                tasks,
                methods,
                buffers,
                seeds,
                data_dir,
                out_dir,
            };
            let cfg = ExperimentConfig::load(&config, &overrides)
                .with_context(|| format!("loading {}", config.display()))?;
            let opts = RunOptions {
                force,
                jobs,
                save_params: save,
                init_params: load,
                quiet,
            };
            let report = run(&cfg, &opts)?;
            if !quiet {
                print!("{}", ser_harness::aggregate::render_table(&report.aggregate));
            }
            if !report.joint_violations.is_empty() {
                for v in &report.joint_violations {
                    eprintln!("joint bound violated: {v}");
                }
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Curves { input, output } => {
            let curves = emit_curves(&input, &output)?;
            println!("wrote {} curves to {}", curves.len(), output.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Check => {
            let report = run_checks()?;
            print!("{}", report.render());
            if !report.passed() {
                bail!("self-check failed");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
