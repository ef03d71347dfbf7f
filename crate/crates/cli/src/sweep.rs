//! β × δ parameter sweeps run in parallel, one output directory per cell.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::output::emit_outputs;
use crate::runner::{execute, Status};
use crate::CliError;

/// Caps the sweep's thread count.
pub const THREADS_ENV: &str = "TRANSFLOW_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub betas: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl SweepSpec {
    /// Parses arguments such as `beta=1,0.1 delta=0,0.1`. A missing key keeps
    /// the config's value.
    pub fn parse(args: &[String], base: &RunConfig) -> Result<Self, CliError> {
        let mut betas = None;
        let mut deltas = None;
        for a in args {
            let (key, list) = a
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("sweep argument {a:?} is not key=v1,v2,...")))?;
            let values: Vec<f64> = list
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Config(format!("sweep values for {key}: {e}")))?;
            if values.is_empty() {
                return Err(CliError::Config(format!("no sweep values for {key}")));
            }
            let slot = match key.trim() {
                "beta" => &mut betas,
                "delta" => &mut deltas,
                other => return Err(CliError::Config(format!("cannot sweep over {other:?}; use beta or delta"))),
            };
            if slot.replace(values).is_some() {
                return Err(CliError::Config(format!("{key} given twice")));
            }
        }
        Ok(Self {
            betas: betas.unwrap_or_else(|| vec![base.beta]),
            deltas: deltas.unwrap_or_else(|| vec![base.delta]),
        })
    }

    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.deltas
            .iter()
            .flat_map(|&d| self.betas.iter().map(move |&b| (b, d)))
            .collect()
    }
}

pub fn cell_dir_name(beta: f64, delta: f64) -> String {
    format!("beta_{beta:e}_delta_{delta:e}")
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub beta: f64,
    pub delta: f64,
    pub status: Status,
    /// Mean iterations over the first three outer steps.
    pub average_first3: f64,
    pub average: f64,
}

fn thread_count() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

/// Runs every cell, writing each into its own directory under `out`, then
/// `table.csv` with rows δ, columns β and the mean iterations over the
/// first three outer steps (`fail` where the run failed).
pub fn run_sweep(base: &RunConfig, spec: &SweepSpec, out: &Path) -> Result<Vec<CellResult>, CliError> {
    let cells: Vec<RunConfig> = spec
        .cells()
        .into_iter()
        .map(|(b, d)| {
            let mut c = base.clone();
            c.beta = b;
            c.delta = d;
            c.validate().map(|_| c)
        })
        .collect::<Result<_, _>>()?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count()? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Config(e.to_string()))?;
    let results: Vec<Result<CellResult, CliError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| {
                let o = execute(c)?;
                emit_outputs(c, &o, &out.join(cell_dir_name(c.beta, c.delta)))?;
                Ok(CellResult {
                    beta: c.beta,
                    delta: c.delta,
                    status: o.status,
                    average_first3: o.report.average_first(3),
                    average: o.report.average_iterations(),
                })
            })
            .collect()
    });
    let results: Vec<CellResult> = results.into_iter().collect::<Result<_, _>>()?;
    write_table(spec, &results, &out.join("table.csv"))?;
    Ok(results)
}

pub fn format_table(spec: &SweepSpec, results: &[CellResult]) -> String {
    let mut s = String::from("delta\\beta");
    for b in &spec.betas {
        s.push_str(&format!(",{b:e}"));
    }
    s.push('\n');
    for (row, d) in spec.deltas.iter().enumerate() {
        s.push_str(&format!("{d:e}"));
        for r in &results[row * spec.betas.len()..(row + 1) * spec.betas.len()] {
            if r.status == Status::NumericalFailure {
                s.push_str(",fail");
            } else {
                s.push_str(&format!(",{}", r.average_first3));
            }
        }
        s.push('\n');
    }
    s
}

fn write_table(spec: &SweepSpec, results: &[CellResult], path: &Path) -> Result<(), CliError> {
    fs::write(path, format_table(spec, results)).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Exit class of a sweep: the worst cell wins.
pub fn sweep_status(results: &[CellResult]) -> Status {
    if results.iter().any(|r| r.status == Status::NumericalFailure) {
        Status::NumericalFailure
    } else if results.iter().any(|r| r.status == Status::NotConverged) {
        Status::NotConverged
    } else {
        Status::Converged
    }
}
