//! Empirical coverage of excursion sets against posterior draws.
//!
//! Nodes are ranked by `F` so every set `{F ≥ 1 − α}` is a prefix of the
//! ranking; one pass over a draw finds the first violated rank and a
//! histogram of those ranks answers every `α` at once.

use std::io::Write;

use crate::error::{Error, Result};
use crate::excursions::ExcursionResult;
use crate::families::Side;

/// `0.01, 0.02, …, 0.99`.
pub fn alpha_grid() -> Vec<f64> {
    (1..100).map(|k| k as f64 / 100.0).collect()
}

#[derive(Debug, Clone)]
pub struct CoverageAccumulator {
    order: Vec<usize>,
    sides: Vec<Option<Side>>,
    level: f64,
    alphas: Vec<f64>,
    set_sizes: Vec<usize>,
    first_violation: Vec<u64>,
    n_draws: u64,
}

impl CoverageAccumulator {
    pub fn new(result: &ExcursionResult<f64>, alphas: &[f64]) -> Self {
        let f = &result.function;
        let mut order: Vec<usize> = (0..f.len()).collect();
        order.sort_by(|&a, &b| f[b].total_cmp(&f[a]).then(a.cmp(&b)));
        let set_sizes = alphas.iter().map(|&a| result.set_at(a).len()).collect();
        Self {
            order,
            sides: result.sides.clone(),
            level: result.level,
            alphas: alphas.to_vec(),
            set_sizes,
            first_violation: vec![0; f.len() + 1],
            n_draws: 0,
        }
    }

    fn holds(&self, i: usize, x: f64) -> bool {
        match self.sides[i] {
            Some(Side::Positive) => x > self.level,
            Some(Side::Negative) => x < self.level,
            None => false,
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        let r = self.order.iter().position(|&i| !self.holds(i, x[i])).unwrap_or(self.order.len());
        self.first_violation[r] += 1;
        self.n_draws += 1;
    }

    pub fn n_draws(&self) -> u64 {
        self.n_draws
    }

    pub fn report(&self, method: &str) -> CoverageReport {
        let n = self.n_draws.max(1) as f64;
        // tail[r] = #draws whose first violation is at rank ≥ r.
        let mut tail = vec![0u64; self.first_violation.len() + 1];
        for r in (0..self.first_violation.len()).rev() {
            tail[r] = tail[r + 1] + self.first_violation[r];
        }
        let rows = self
            .alphas
            .iter()
            .zip(&self.set_sizes)
            .map(|(&alpha, &size)| {
                let p = tail[size] as f64 / n;
                CoverageRow { alpha, p_hat: p, diff: (1.0 - alpha) - p, se: (p * (1.0 - p) / n).sqrt() }
            })
            .collect();
        CoverageReport { method: method.to_string(), n_draws: self.n_draws, rows }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageRow {
    pub alpha: f64,
    pub p_hat: f64,
    pub diff: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub method: String,
    pub n_draws: u64,
    pub rows: Vec<CoverageRow>,
}

impl CoverageReport {
    pub fn mean_abs_diff(&self) -> f64 {
        self.rows.iter().map(|r| r.diff.abs()).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> Result<()> {
        let io = |e: std::io::Error| Error::Io { path: "<coverage>".into(), source: e };
        if header {
            writeln!(w, "alpha,method,p_hat,diff,se").map_err(io)?;
        }
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{}", r.alpha, self.method, r.p_hat, r.diff, r.se).map_err(io)?;
        }
        Ok(())
    }
}
