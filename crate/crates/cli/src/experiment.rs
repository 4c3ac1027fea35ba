//! Runs the (lambda, beta, seed) grid of an experiment and writes the CSVs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lpi_core::{approximate_pi, EvaluatorConfig, PiOptions, PiTrace, RngStream};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Experiment;

/// Stream id of the per-cell simulation randomness.
const CELL_STREAM: u64 = 0x6365_6c6c;

pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub lambda: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Cell {
    pub fn trace_file(&self) -> String {
        format!("trace_l{}_b{}_s{}.csv", self.lambda, self.beta, self.seed)
    }
}

/// Cells in output order: lambda-major, then beta, then seed.
pub fn cells(exp: &Experiment) -> Vec<Cell> {
    let mut out = Vec::with_capacity(exp.lambdas.len() * exp.betas.len() * exp.seeds.len());
    for &lambda in &exp.lambdas {
        for &beta in &exp.betas {
            for &seed in &exp.seeds {
                out.push(Cell { lambda, beta, seed });
            }
        }
    }
    out
}

#[derive(Debug, Serialize)]
struct TraceRow<'a> {
    k: usize,
    lambda: f64,
    beta: f64,
    seed: u64,
    evaluator: &'a str,
    bellman_residual_inf: f64,
    exact_subopt_inf: f64,
    policy_changed: bool,
    cond_estimate: f64,
    samples_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub lambda: f64,
    pub beta: f64,
    pub seed: u64,
    pub evaluator: String,
    pub iterations: usize,
    pub final_subopt_inf: Option<f64>,
    pub best_subopt_inf: Option<f64>,
    pub best_k: Option<usize>,
    pub final_bellman_residual_inf: Option<f64>,
    pub oscillation_at: Option<usize>,
    pub oscillation_period: Option<usize>,
    pub samples_used: usize,
    pub error: String,
}

impl SummaryRow {
    pub fn failed(&self) -> bool {
        !self.error.is_empty()
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub rows: Vec<SummaryRow>,
    pub summary_path: PathBuf,
}

impl RunReport {
    pub fn all_failed(&self) -> bool {
        self.rows.iter().all(SummaryRow::failed)
    }
}

fn run_cell(exp: &Experiment, cell: Cell) -> lpi_core::Result<PiTrace> {
    let mdp = exp.instance(cell.seed)?;
    let basis = exp.basis()?;
    let eval = EvaluatorConfig {
        gamma: exp.gamma,
        trajectory_budget: exp.trajectory_budget,
        long_trajectory_length: exp.long_trajectory_length,
        exact: exp.exact,
        pair_sampling: exp.pair_sampling,
        ..EvaluatorConfig::new(cell.lambda, exp.restart_dist(cell.beta)?, RngStream::new(cell.seed, CELL_STREAM))
    };
    let opts = PiOptions { reuse_samples: exp.reuse_samples, ..PiOptions::new(exp.evaluator, eval, exp.iters) };
    approximate_pi(&mdp, &basis, &opts)
}

fn trace_csv(exp: &Experiment, cell: Cell, trace: &PiTrace) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for rec in &trace.records {
        w.serialize(TraceRow {
            k: rec.k,
            lambda: cell.lambda,
            beta: cell.beta,
            seed: cell.seed,
            evaluator: exp.evaluator.key(),
            bellman_residual_inf: rec.bellman_residual_inf,
            exact_subopt_inf: rec.exact_subopt_inf,
            policy_changed: rec.policy_changed,
            cond_estimate: rec.cond_estimate,
            samples_used: rec.samples_used,
        })?;
    }
    if trace.records.is_empty() {
        w.write_record([
            "k",
            "lambda",
            "beta",
            "seed",
            "evaluator",
            "bellman_residual_inf",
            "exact_subopt_inf",
            "policy_changed",
            "cond_estimate",
            "samples_used",
        ])?;
    }
    Ok(w.into_inner()?)
}

fn summarize(exp: &Experiment, cell: Cell, outcome: &lpi_core::Result<PiTrace>) -> SummaryRow {
    let mut row = SummaryRow {
        lambda: cell.lambda,
        beta: cell.beta,
        seed: cell.seed,
        evaluator: exp.evaluator.key().to_string(),
        iterations: 0,
        final_subopt_inf: None,
        best_subopt_inf: None,
        best_k: None,
        final_bellman_residual_inf: None,
        oscillation_at: None,
        oscillation_period: None,
        samples_used: 0,
        error: String::new(),
    };
    match outcome {
        Ok(trace) => {
            row.iterations = trace.records.len();
            if let Some(last) = trace.records.last() {
                row.final_subopt_inf = Some(last.exact_subopt_inf);
                row.final_bellman_residual_inf = Some(last.bellman_residual_inf);
            }
            if let Some(best) = trace.best() {
                row.best_subopt_inf = Some(best.exact_subopt_inf);
                row.best_k = Some(best.k);
            }
            row.oscillation_at = trace.oscillation_at;
            row.oscillation_period = trace.oscillation_period;
            row.samples_used = trace.records.iter().map(|r| r.samples_used).sum();
            if let Some(e) = &trace.error {
                row.error = format!("stopped after {} iterations: {e}", trace.records.len());
            }
        }
        Err(e) => row.error = e.to_string(),
    }
    row
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

/// Runs every cell on up to `exp.workers` threads and writes one trace CSV
/// per cell plus the summary. Output is independent of the worker count.
pub fn run_experiment(exp: &Experiment) -> Result<RunReport> {
    fs::create_dir_all(&exp.out_dir).with_context(|| format!("creating {}", exp.out_dir.display()))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(exp.workers).build()?;
    let grid = cells(exp);
    let rows = pool.install(|| {
        grid.par_iter()
            .map(|&cell| -> Result<SummaryRow> {
                let outcome = run_cell(exp, cell);
                if let Ok(trace) = &outcome {
                    write_atomic(&exp.out_dir.join(cell.trace_file()), &trace_csv(exp, cell, trace)?)?;
                }
                Ok(summarize(exp, cell, &outcome))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row)?;
    }
    let summary_path = exp.out_dir.join(SUMMARY_FILE);
    write_atomic(&summary_path, &w.into_inner()?)?;
    Ok(RunReport { rows, summary_path })
}
