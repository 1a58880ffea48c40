//! Average-accuracy curves: the stage-t average over tasks seen so far,
//! averaged across seeds, one column per method and buffer.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ser_core::{AccuracyTable, MethodKind};

use crate::error::{io_err, HarnessError, Result};
use crate::output::write_atomic;

/// Run identity recovered from a `{method}_buf{B}_seed{S}.csv` file name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunKey {
    pub method: MethodKind,
    pub buffer: usize,
    pub seed: u64,
}

pub fn parse_stem(stem: &str) -> Option<RunKey> {
    let (rest, seed) = stem.rsplit_once("_seed")?;
    let (method, buffer) = rest.rsplit_once("_buf")?;
    Some(RunKey {
        method: method.parse().ok()?,
        buffer: buffer.parse().ok()?,
        seed: seed.parse().ok()?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub scenario: String,
    pub method: MethodKind,
    pub buffer: usize,
    pub seeds: usize,
    /// Mean stage average per stage; `None` where no seed has that stage.
    pub points: Vec<Option<f64>>,
}

impl Curve {
    pub fn label(&self) -> String {
        format!("{}_buf{}", self.method, self.buffer)
    }
}

fn csv_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    let mut visit = |d: &Path| -> Result<()> {
        let scenario = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        for entry in std::fs::read_dir(d).map_err(io_err(d))? {
            let path = entry.map_err(io_err(d))?.path();
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            if path.is_file() && name.ends_with(".csv") && !name.ends_with(".taskil.csv") {
                out.push((scenario.clone(), path));
            }
        }
        Ok(())
    };
    visit(dir)?;
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for sub in subdirs {
        visit(&sub)?;
    }
    Ok(out)
}

/// Reads every per-seed accuracy CSV in `dir` and its immediate
/// subdirectories. The scenario of a file is the name of its directory.
pub fn load_curves(dir: &Path) -> Result<Vec<Curve>> {
    let mut groups: BTreeMap<(String, MethodKind, usize), Vec<AccuracyTable>> = BTreeMap::new();
    for (scenario, path) in csv_files(dir)? {
        let Some(key) = path.file_stem().and_then(|s| parse_stem(&s.to_string_lossy())) else {
            continue;
        };
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let table = AccuracyTable::parse_csv(&text).map_err(|e| HarnessError::Parse {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        groups.entry((scenario, key.method, key.buffer)).or_default().push(table);
    }
    Ok(groups
        .into_iter()
        .map(|((scenario, method, buffer), tables)| {
            let stages = tables.iter().map(|t| t.rows.len()).max().unwrap_or(0);
            let points = (0..stages)
                .map(|s| {
                    let vals: Vec<f64> = tables.iter().filter_map(|t| t.stage_average(s)).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect();
            Curve {
                scenario,
                method,
                buffer,
                seeds: tables.len(),
                points,
            }
        })
        .collect())
}

/// Wide CSV: a `stage` column (1-based) then one column per curve.
pub fn curves_csv(curves: &[Curve]) -> String {
    let multi = curves.windows(2).any(|w| w[0].scenario != w[1].scenario);
    let mut out = String::from("stage");
    for c in curves {
        if multi {
            let _ = write!(out, ",{}/{}", c.scenario, c.label());
        } else {
            let _ = write!(out, ",{}", c.label());
        }
    }
    out.push('\n');
    let stages = curves.iter().map(|c| c.points.len()).max().unwrap_or(0);
    for s in 0..stages {
        let _ = write!(out, "{}", s + 1);
        for c in curves {
            match c.points.get(s).copied().flatten() {
                Some(v) => {
                    let _ = write!(out, ",{v}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

pub fn emit_curves(in_dir: &Path, out_file: &Path) -> Result<Vec<Curve>> {
    let curves = load_curves(in_dir)?;
    if curves.is_empty() {
        return Err(HarnessError::Config(format!(
            "no per-seed accuracy CSVs under {}",
            in_dir.display()
        )));
    }
    if let Some(parent) = out_file.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_atomic(out_file, curves_csv(&curves).as_bytes())?;
    Ok(curves)
}
