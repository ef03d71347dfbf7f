//! Turns a [`RunConfig`] into a problem, runs it and collects the result.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transflow_core::driver::{self, DriverError, FdProblem, NewtonProblem, RbfProblem, RunReport};
use transflow_core::grid::GridSpec;
use transflow_core::kkt::{self, KktError, ObjectiveData};
use transflow_core::precond::PrecondError;
use transflow_core::rbf::{self, RbfCoefficients, RbfData, RbfError, RbfModel};
use transflow_core::state::SpaceTimeState;

use crate::config::{CentreGenerator, Discretisation, RunConfig};
use crate::pgm;
use crate::synth;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Status {
    Converged,
    NotConverged,
    NumericalFailure,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Converged => crate::EXIT_CONVERGED,
            Status::NotConverged => crate::EXIT_NOT_CONVERGED,
            Status::NumericalFailure => crate::EXIT_NUMERICAL,
        }
    }
}

/// Solution fields on the output grid; `y[0]` is the initial image and
/// `m1`, `m2`, `p` hold steps `1..=N_t`.
#[derive(Debug, Clone)]
pub struct Fields {
    pub grid: GridSpec,
    pub y: Vec<Vec<f64>>,
    pub m1: Vec<Vec<f64>>,
    pub m2: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: Status,
    pub error: Option<String>,
    pub report: RunReport,
    pub initial_misfit: f64,
    pub final_misfit: f64,
    pub fields: Fields,
    pub elapsed_seconds: f64,
    /// RBF centres and shape parameter, when used.
    pub rbf: Option<(Vec<[f64; 2]>, f64)>,
}

/// Exit-code class of a solver error.
pub fn classify(e: &DriverError) -> CliError {
    let numerical = match e {
        DriverError::InvalidConfig(_) => false,
        DriverError::Kkt(k) => matches!(k, KktError::Transport(_) | KktError::Mass(_)),
        DriverError::Precond(p) => !matches!(p, PrecondError::TooLargeForDense { .. } | PrecondError::Kkt(_)),
        DriverError::Rbf(r) => matches!(r, RbfError::IllConditioned(_) | RbfError::FactorizationStale),
        _ => true,
    };
    if numerical {
        CliError::Numerical(e.to_string())
    } else {
        CliError::Input(e.to_string())
    }
}

fn rbf_err(e: RbfError) -> CliError {
    classify(&DriverError::Rbf(e))
}

pub fn grid_of(cfg: &RunConfig) -> Result<GridSpec, CliError> {
    GridSpec::new(cfg.grid.n_x, cfg.grid.n_y, cfg.grid.n_t).map_err(|e| CliError::Config(e.to_string()))
}

/// Images on the grid: `(y0, y1, frames)`, frames present only when `δ > 0`.
/// Without a frame directory the frames are the exact translated bump for
/// synthetic data and the linear interpolation between `y0` and `y1` otherwise.
fn grid_data(cfg: &RunConfig, g: &GridSpec) -> Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>), CliError> {
    let (y0, y1) = match (&cfg.io.y0_path, &cfg.io.y1_path) {
        (Some(a), Some(b)) => (
            pgm::load_image(a, g, 0, cfg.io.resample)?.values,
            pgm::load_image(b, g, g.n_t, cfg.io.resample)?.values,
        ),
        _ => {
            let s = synthetic_shift(cfg)?;
            let (a, b) = synth::synth_gaussian_translation(g, s).map_err(CliError::Config)?;
            (a.values, b.values)
        }
    };
    if cfg.delta == 0.0 {
        return Ok((y0, y1, None));
    }
    let frames = if let Some(dir) = &cfg.io.ybar_dir {
        load_frames(dir, g, cfg.io.resample)?
    } else if cfg.io.y0_path.is_none() {
        synth::synth_gaussian_sequence(g, synthetic_shift(cfg)?).map_err(CliError::Config)?
    } else {
        linear_frames(&y0, &y1, g.n_t)
    };
    Ok((y0, y1, Some(frames)))
}

fn synthetic_shift(cfg: &RunConfig) -> Result<[f64; 2], CliError> {
    cfg.io
        .synthetic
        .map(|s| s.shift)
        .ok_or_else(|| CliError::Config("no input images and no synthetic data".into()))
}

/// `(1 - t_k) y0 + t_k y1` at `t_k = k/n_t`, `k = 1..=n_t`.
pub fn linear_frames(y0: &[f64], y1: &[f64], n_t: usize) -> Vec<f64> {
    (1..=n_t)
        .flat_map(|k| {
            let t = k as f64 / n_t as f64;
            y0.iter().zip(y1).map(move |(a, b)| (1.0 - t) * a + t * b)
        })
        .collect()
}

fn load_frames(dir: &std::path::Path, g: &GridSpec, resample: bool) -> Result<Vec<f64>, CliError> {
    let io = |e| CliError::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io)?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    if paths.len() != g.n_t {
        return Err(CliError::Input(format!(
            "{} holds {} PGM frames, need {}",
            dir.display(),
            paths.len(),
            g.n_t
        )));
    }
    let mut out = Vec::with_capacity(g.n() * g.n_t);
    for (k, p) in paths.iter().enumerate() {
        out.extend(pgm::load_image(p, g, k + 1, resample)?.values);
    }
    Ok(out)
}

pub fn centres_of(cfg: &RunConfig) -> Result<Vec<[f64; 2]>, CliError> {
    let r = cfg
        .rbf
        .as_ref()
        .ok_or_else(|| CliError::Config("missing rbf section".into()))?;
    match (&r.centres_path, r.generator) {
        (Some(p), _) => rbf::read_centres_csv(p).map_err(rbf_err),
        (None, Some(CentreGenerator::Halton { n })) => Ok(rbf::halton_centres(n)),
        (None, Some(CentreGenerator::Grid { side })) => Ok(rbf::grid_centres(side)),
        (None, Some(CentreGenerator::Random { n })) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            Ok((0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect())
        }
        (None, None) => Err(CliError::Config("rbf needs centres_path or generator".into())),
    }
}

/// Nearest grid node to each point (periodic).
fn sample_nearest(values: &[f64], g: &GridSpec, points: &[[f64; 2]]) -> Vec<f64> {
    points
        .iter()
        .map(|p| {
            let i = (p[0] / g.h).round() as usize % g.n_x;
            let j = (p[1] / g.h).round() as usize % g.n_y;
            values[g.idx(i, j)]
        })
        .collect()
}

fn rbf_data(cfg: &RunConfig, g: &GridSpec, centres: &[[f64; 2]]) -> Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>), CliError> {
    if cfg.io.y0_path.is_none() {
        let s = synthetic_shift(cfg)?;
        let y0 = synth::sample_bump(centres, s, 0.0);
        let y1 = synth::sample_bump(centres, s, 1.0);
        let frames = (cfg.delta > 0.0).then(|| {
            (1..=g.n_t)
                .flat_map(|k| synth::sample_bump(centres, s, k as f64 * g.tau))
                .collect()
        });
        return Ok((y0, y1, frames));
    }
    let (y0, y1, frames) = grid_data(cfg, g)?;
    let n = g.n();
    let frames = frames.map(|f| {
        f.chunks(n)
            .flat_map(|c| sample_nearest(c, g, centres))
            .collect()
    });
    Ok((sample_nearest(&y0, g, centres), sample_nearest(&y1, g, centres), frames))
}

fn fd_fields(state: &SpaceTimeState) -> Fields {
    let nt = state.grid.n_t;
    Fields {
        grid: state.grid,
        y: (0..=nt).map(|k| state.y_at(k).to_vec()).collect(),
        m1: (1..=nt).map(|k| state.m1_at(k).to_vec()).collect(),
        m2: (1..=nt).map(|k| state.m2_at(k).to_vec()).collect(),
        p: (1..=nt).map(|k| state.p_at(k).to_vec()).collect(),
    }
}

fn rbf_fields(model: &RbfModel, c: &RbfCoefficients, y0: &[f64], g: &GridSpec) -> Fields {
    let b = model.eval_basis(&grid_points(g));
    let ev = |a: &[f64]| (&b * nalgebra::DVector::from_column_slice(a)).as_slice().to_vec();
    let nt = c.n_t;
    let mut y = vec![ev(y0)];
    y.extend((1..=nt).map(|k| ev(c.y(k))));
    Fields {
        grid: *g,
        y,
        m1: (1..=nt).map(|k| ev(c.m1(k))).collect(),
        m2: (1..=nt).map(|k| ev(c.m2(k))).collect(),
        p: (1..=nt).map(|k| ev(c.p(k))).collect(),
    }
}

fn finish<P: NewtonProblem>(
    problem: &mut P,
    result: Result<RunReport, DriverError>,
) -> Result<(Status, Option<String>, RunReport), CliError> {
    match result {
        Ok(r) => {
            let status = if r.converged { Status::Converged } else { Status::NotConverged };
            Ok((status, None, r))
        }
        Err(e) => match e.partial_report() {
            Some(r) => {
                let r = r.clone();
                problem
                    .set_iterate(&r.final_iterate)
                    .map_err(|e| CliError::Numerical(e.to_string()))?;
                Ok((Status::NumericalFailure, Some(e.to_string()), r))
            }
            None => Err(classify(&e)),
        },
    }
}

/// Runs one configuration. Errors are input problems or failures before the
/// first outer step; failures during the run come back as an [`Outcome`]
/// with [`Status::NumericalFailure`] and the partial report.
pub fn execute(cfg: &RunConfig) -> Result<Outcome, CliError> {
    cfg.validate()?;
    let g = grid_of(cfg)?;
    let params = cfg.params();
    let outer = cfg.outer_config();
    let t0 = Instant::now();
    match cfg.discretisation {
        Discretisation::FiniteDifference => {
            let (y0, y1, frames) = grid_data(cfg, &g)?;
            let data = ObjectiveData::new(g, y0, y1, frames).map_err(|e| classify(&e.into()))?;
            let mut problem = FdProblem::new(data, params).map_err(|e| classify(&e))?;
            let initial_misfit = kkt::terminal_misfit(&problem.state, &problem.data, &params);
            let result = driver::run(&mut problem, &outer);
            let (status, error, report) = finish(&mut problem, result)?;
            Ok(Outcome {
                status,
                error,
                initial_misfit,
                final_misfit: kkt::terminal_misfit(&problem.state, &problem.data, &params),
                fields: fd_fields(&problem.state),
                report,
                elapsed_seconds: t0.elapsed().as_secs_f64(),
                rbf: None,
            })
        }
        Discretisation::RBF => {
            let centres = centres_of(cfg)?;
            let r = cfg.rbf.as_ref().expect("validated");
            let model = match r.shape_c {
                Some(c) => RbfModel::new(centres, c, g.n_t),
                None => RbfModel::with_default_shape(centres, g.n_t),
            }
            .map_err(rbf_err)?;
            let (y0, y1, frames) = rbf_data(cfg, &g, &model.centres)?;
            let data = RbfData::new(&model, y0, y1, frames).map_err(rbf_err)?;
            let mut problem = RbfProblem::new(model, data, params).map_err(|e| classify(&e))?;
            let initial_misfit = rbf::rbf_terminal_misfit(&problem.model, &problem.coeffs, &problem.data, &params);
            let result = driver::run(&mut problem, &outer);
            let (status, error, report) = finish(&mut problem, result)?;
            // y0 on the grid is the interpolant of the initial samples
            let y0_coef = problem.model.interpolate(&problem.data.y0).map_err(rbf_err)?;
            let fields = rbf_fields(&problem.model, &problem.coeffs, &y0_coef, &g);
            Ok(Outcome {
                status,
                error,
                initial_misfit,
                final_misfit: rbf::rbf_terminal_misfit(&problem.model, &problem.coeffs, &problem.data, &params),
                fields,
                report,
                elapsed_seconds: t0.elapsed().as_secs_f64(),
                rbf: Some((problem.model.centres.clone(), problem.model.shape_c)),
            })
        }
    }
}

fn grid_points(g: &GridSpec) -> Vec<[f64; 2]> {
    (0..g.n_y)
        .flat_map(|j| (0..g.n_x).map(move |i| g.coords(i, j)))
        .map(|(x, y)| [x, y])
        .collect()
}
