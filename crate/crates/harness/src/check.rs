//! The `check` command: gradient and reservoir self-tests with fixed seeds.

use std::fmt::Write as _;

use ser_core::diagnostics::{gradient_suite, reservoir_suite, GradientReport, ReservoirReport};

use crate::error::Result;

pub const GRADIENT_CONFIGS: usize = 100;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const RESERVOIR_ITEMS: usize = 10_000;
pub const RESERVOIR_CAPACITY: usize = 100;
pub const RESERVOIR_TRIALS: usize = 1_000;
/// Bound on the standardised chi-square statistic of the inclusion counts.
pub const CHI_SQUARE_BOUND: f64 = 4.0;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub gradients: GradientReport,
    pub reservoir: ReservoirReport,
}

impl CheckReport {
    pub fn gradients_ok(&self) -> bool {
        self.gradients.max_error() < GRADIENT_TOLERANCE
    }

    pub fn reservoir_ok(&self) -> bool {
        self.reservoir.chi_square_z().abs() < CHI_SQUARE_BOUND
    }

    pub fn passed(&self) -> bool {
        self.gradients_ok() && self.reservoir_ok()
    }

    pub fn render(&self) -> String {
        let g = &self.gradients;
        let r = &self.reservoir;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "gradients: {} configurations, {:.2}s",
            g.configurations,
            g.elapsed.as_secs_f64()
        );
        for (name, err) in &g.worst {
            let _ = writeln!(out, "  {name:<15} max relative error {err:.3e}");
        }
        let _ = writeln!(
            out,
            "gradients {} (tolerance {GRADIENT_TOLERANCE:e})",
            if self.gradients_ok() { "ok" } else { "FAILED" }
        );
        let _ = writeln!(
            out,
            "reservoir: {} items, capacity {}, {} trials, {:.2}s",
            r.items,
            r.capacity,
            r.trials,
            r.elapsed.as_secs_f64()
        );
        let _ = writeln!(
            out,
            "  expected frequency {:.4}, sigma {:.5}, max |z| {:.2}, items beyond 4 sigma {}",
            r.expected_frequency(),
            r.sigma(),
            r.max_z(),
            r.items_outside(4.0)
        );
        let _ = writeln!(out, "  chi-square z {:.3}", r.chi_square_z());
        let _ = writeln!(
            out,
            "reservoir {} (|chi-square z| < {CHI_SQUARE_BOUND})",
            if self.reservoir_ok() { "ok" } else { "FAILED" }
        );
        out
    }
}

pub fn run_checks() -> Result<CheckReport> {
    Ok(CheckReport {
        gradients: gradient_suite(GRADIENT_CONFIGS, 0)?,
        reservoir: reservoir_suite(RESERVOIR_ITEMS, RESERVOIR_CAPACITY, RESERVOIR_TRIALS, 0)?,
    })
}
