//! Field CSVs and `run.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use transflow_core::krylov::SolveReport;

use crate::config::RunConfig;
use crate::runner::{Outcome, Status};
use crate::CliError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One grid row per line, comma separated. `{:e}` prints the shortest
/// representation that parses back to the same bits.
pub fn format_field(values: &[f64], n_x: usize) -> String {
    let mut s = String::with_capacity(values.len() * 24);
    for row in values.chunks(n_x) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(&format!("{v:e}"));
        }
        s.push('\n');
    }
    s
}

pub fn parse_field(text: &str) -> Result<(Vec<f64>, usize), CliError> {
    let mut values = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Input(format!("line {}: {e}", lineno + 1)))?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(CliError::Input(format!("line {}: ragged row", lineno + 1)));
        }
        values.extend(row);
    }
    Ok((values, width.unwrap_or(0)))
}

pub fn read_field(path: &Path) -> Result<(Vec<f64>, usize), CliError> {
    parse_field(&fs::read_to_string(path).map_err(io_err(path))?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepSummary {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

impl From<&SolveReport> for StepSummary {
    fn from(s: &SolveReport) -> Self {
        Self {
            iterations: s.iterations,
            relative_residual: s.relative_residual,
            converged: s.converged,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: serde_json::Value,
    pub status: String,
    pub error: Option<String>,
    pub converged: bool,
    pub outer_iterations: usize,
    pub linear_iterations: Vec<usize>,
    pub average_iterations: f64,
    pub average_iterations_first3: f64,
    pub steps: Vec<StepSummary>,
    pub initial_objective: f64,
    pub objective_history: Vec<f64>,
    pub initial_residual_norm: f64,
    pub residual_norm_history: Vec<f64>,
    pub step_norm_history: Vec<f64>,
    pub step_lengths: Vec<f64>,
    pub initial_terminal_misfit: f64,
    pub final_terminal_misfit: f64,
    pub elapsed_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rbf_shape_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rbf_centres: Option<Vec<[f64; 2]>>,
}

impl RunSummary {
    pub fn new(cfg: &RunConfig, o: &Outcome) -> Self {
        let r = &o.report;
        Self {
            config: serde_json::to_value(cfg).expect("config serialises"),
            status: format!("{:?}", o.status),
            error: o.error.clone(),
            converged: o.status == Status::Converged,
            outer_iterations: r.outer_iterations,
            linear_iterations: r.solves.iter().map(|s| s.iterations).collect(),
            average_iterations: r.average_iterations(),
            average_iterations_first3: r.average_first(3),
            steps: r.solves.iter().map(StepSummary::from).collect(),
            initial_objective: r.initial_objective,
            objective_history: r.objective_history.clone(),
            initial_residual_norm: r.initial_residual_norm,
            residual_norm_history: r.residual_norm_history.clone(),
            step_norm_history: r.step_norm_history.clone(),
            step_lengths: r.step_lengths.clone(),
            initial_terminal_misfit: o.initial_misfit,
            final_terminal_misfit: o.final_misfit,
            elapsed_seconds: o.elapsed_seconds,
            rbf_shape_c: o.rbf.as_ref().map(|r| r.1),
            rbf_centres: o.rbf.as_ref().map(|r| r.0.clone()),
        }
    }
}

/// Writes `y_k.csv` (`k = 0..=N_t`), `m1_k.csv`, `m2_k.csv`, `p_k.csv`
/// (`k = 1..=N_t`) and `run.json` into `dir`.
pub fn emit_outputs(cfg: &RunConfig, outcome: &Outcome, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let f = &outcome.fields;
    let nx = f.grid.n_x;
    let write = |name: String, values: &[f64]| -> Result<(), CliError> {
        let p: PathBuf = dir.join(name);
        fs::write(&p, format_field(values, nx)).map_err(io_err(&p))
    };
    for (k, v) in f.y.iter().enumerate() {
        write(format!("y_{k}.csv"), v)?;
    }
    for (k, ((m1, m2), p)) in f.m1.iter().zip(&f.m2).zip(&f.p).enumerate() {
        write(format!("m1_{}.csv", k + 1), m1)?;
        write(format!("m2_{}.csv", k + 1), m2)?;
        write(format!("p_{}.csv", k + 1), p)?;
    }
    let p = dir.join("run.json");
    let json = serde_json::to_string_pretty(&RunSummary::new(cfg, outcome)).expect("summary serialises");
    fs::write(&p, json).map_err(io_err(&p))
}
