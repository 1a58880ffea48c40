//! End-to-end runs on the synthetic scenario: outputs, resumption,
//! aggregation and curves.

use std::path::Path;
use std::process::Command;

use ser_core::{AccuracyTable, MethodKind};
use ser_harness::aggregate::{self, Stat};
use ser_harness::curves::load_curves;
use ser_harness::{run, ExperimentConfig, HarnessError, Overrides, RunOptions};

fn config(out: &Path) -> ExperimentConfig {
    let text = format!(
        r#"
[experiment]
scenario = "synthetic"
tasks = 3
methods = ["sgd", "joint", "er", "derpp", "ser"]
buffers = [20]
seeds = [0, 1]
out_dir = "{}"

[train]
batch_size = 10
buffer_batch_size = 10
hidden = [16]

[synthetic]
classes_per_task = 2
dim = 8
n_per_class = 30
"#,
        out.display()
    );
    ExperimentConfig::parse(&text, &Overrides::default()).unwrap()
}

fn quiet() -> RunOptions {
    RunOptions {
        quiet: true,
        ..RunOptions::default()
    }
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn writes_one_csv_and_json_per_cell_plus_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let report = run(&cfg, &quiet()).unwrap();
    assert_eq!(report.cells.len(), 10);
    let sdir = dir.path().join("synthetic");
    for stem in ["sgd_buf0_seed0", "joint_buf0_seed1", "er_buf20_seed0", "derpp_buf20_seed1", "ser_buf20_seed0"] {
        assert!(sdir.join(format!("{stem}.csv")).is_file(), "{stem}");
        assert!(sdir.join(format!("{stem}.json")).is_file(), "{stem}");
        // synthetic tasks have disjoint classes, so a task-IL matrix exists
        assert!(sdir.join(format!("{stem}.taskil.csv")).is_file(), "{stem}");
    }
    assert!(sdir.join("aggregate.json").is_file());
    let table = read(sdir.join("aggregate.txt"));
    assert!(table.contains("ser") && table.contains("joint"));

    let csv = read(sdir.join("ser_buf20_seed0.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "stage,task_1,task_2,task_3");
    assert_eq!(lines.len(), 4);
    // upper triangle is blank
    assert!(lines[1].ends_with(",,"));
}

#[test]
fn rerun_with_force_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(&config(a.path()), &quiet()).unwrap();
    let opts = RunOptions {
        force: true,
        jobs: 2,
        ..quiet()
    };
    run(&config(b.path()), &opts).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path().join("synthetic"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 20);
    for name in names {
        let x = std::fs::read(a.path().join("synthetic").join(&name)).unwrap();
        let y = std::fs::read(b.path().join("synthetic").join(&name)).unwrap();
        assert_eq!(x, y, "{name:?} differs");
    }
}

#[test]
fn completed_cells_are_skipped_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    run(&cfg, &quiet()).unwrap();
    let target = dir.path().join("synthetic/er_buf20_seed1.csv");
    let before = read(&target);
    std::fs::write(&target, "tampered").unwrap();
    // delete one JSON: that cell counts as incomplete and reruns
    std::fs::remove_file(dir.path().join("synthetic/ser_buf20_seed1.json")).unwrap();

    let report = run(&cfg, &quiet()).unwrap();
    let rerun: Vec<String> = report.cells.iter().filter(|c| !c.skipped).map(|c| c.cell.stem()).collect();
    assert_eq!(rerun, vec!["ser_buf20_seed1".to_string()]);
    assert_eq!(read(&target), "tampered");

    let forced = run(
        &cfg,
        &RunOptions {
            force: true,
            ..quiet()
        },
    )
    .unwrap();
    assert!(forced.cells.iter().all(|c| !c.skipped));
    assert_eq!(read(&target), before);
}

#[test]
fn aggregate_matches_recomputation_from_per_seed_files() {
    let dir = tempfile::tempdir().unwrap();
    let report = run(&config(dir.path()), &quiet()).unwrap();
    let sdir = dir.path().join("synthetic");
    let on_disk: aggregate::Aggregate = serde_json::from_str(&read(sdir.join("aggregate.json"))).unwrap();
    assert_eq!(on_disk, report.aggregate);
    for row in &on_disk.rows {
        let accs: Vec<f64> = row
            .seeds
            .iter()
            .map(|s| {
                let path = sdir.join(format!("{}_buf{}_seed{s}.json", row.method, row.buffer));
                aggregate::read_summary(&path).unwrap().average_accuracy
            })
            .collect();
        let stat = Stat::of(&accs).unwrap();
        assert_eq!(row.average_accuracy, stat);
        assert_eq!(row.seeds, vec![0, 1]);
    }
    // the JSON summary's mean matches the CSV's final row
    let table = AccuracyTable::parse_csv(&read(sdir.join("derpp_buf20_seed0.csv"))).unwrap();
    let summary = aggregate::read_summary(&sdir.join("derpp_buf20_seed0.json")).unwrap();
    assert!((table.stage_average(2).unwrap() - summary.average_accuracy).abs() < 1e-12);
}

#[test]
fn curves_start_at_first_task_accuracy_and_end_at_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    run(&config(dir.path()), &quiet()).unwrap();
    let curves = load_curves(dir.path()).unwrap();
    assert_eq!(curves.len(), 5);
    let sdir = dir.path().join("synthetic");
    for c in &curves {
        assert_eq!(c.points.len(), 3);
        assert_eq!(c.seeds, 2);
        let mut first = 0.0;
        let mut last = 0.0;
        for seed in [0, 1] {
            let stem = format!("{}_buf{}_seed{seed}", c.method, c.buffer);
            let t = AccuracyTable::parse_csv(&read(sdir.join(format!("{stem}.csv")))).unwrap();
            first += t.rows[0][0].unwrap_or(f64::NAN) / 2.0;
            last += aggregate::read_summary(&sdir.join(format!("{stem}.json"))).unwrap().average_accuracy / 2.0;
        }
        if c.method == MethodKind::Joint {
            // only the final stage is evaluated
            assert!(c.points[0].is_none() && first.is_nan());
        } else {
            assert!((c.points[0].unwrap() - first).abs() < 1e-12);
        }
        assert!((c.points[2].unwrap() - last).abs() < 1e-12);
    }
}

#[test]
fn missing_mnist_is_a_clear_error() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let text = format!(
        "[experiment]\nscenario = \"p_mnist\"\nmethods = [\"sgd\"]\nseeds = [0]\ndata_dir = \"{}\"\nout_dir = \"{}\"\n",
        data.path().display(),
        out.path().display()
    );
    let cfg = ExperimentConfig::parse(&text, &Overrides::default()).unwrap();
    let err = run(&cfg, &quiet()).unwrap_err();
    assert!(matches!(err, HarnessError::MissingData { .. }), "{err:?}");
    let msg = err.to_string();
    assert!(msg.contains("train-images-idx3-ubyte"), "{msg}");
}

#[test]
fn cli_runs_and_emits_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.toml");
    std::fs::write(
        &cfg_path,
        "[experiment]\nscenario = \"synthetic\"\ntasks = 2\nmethods = [\"er\"]\nbuffers = [10]\nseeds = [0]\n\n[synthetic]\ndim = 4\nn_per_class = 20\n",
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_ser");
    let out_dir = dir.path().join("results");
    let status = Command::new(bin)
        .args(["run", "--config"])
        .arg(&cfg_path)
        .args(["--method", "ser", "--buffer", "15", "--seeds", "3,4", "--quiet", "--out-dir"])
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out_dir.join("synthetic/ser_buf15_seed4.json").is_file());
    assert!(!out_dir.join("synthetic/er_buf10_seed0.json").exists());

    let curves = dir.path().join("curves.csv");
    let status = Command::new(bin)
        .args(["curves", "--in"])
        .arg(&out_dir)
        .arg("--out")
        .arg(&curves)
        .status()
        .unwrap();
    assert!(status.success());
    let text = read(&curves);
    assert_eq!(text.lines().next(), Some("stage,ser_buf15"));
    assert_eq!(text.lines().count(), 3);

    let bad = Command::new(bin).args(["run", "--config"]).arg(dir.path().join("nope.toml")).output().unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("nope.toml"));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path, &Overrides::default()).unwrap();
            assert!(!cfg.cells().is_empty(), "{}", path.display());
            n += 1;
        }
    }
    assert_eq!(n, 4);
}
