//! Outer Gauss-Newton / Newton loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kkt::{self, KktError, ObjectiveData, ProblemParams};
use crate::krylov::{self, KrylovConfig, KrylovError, SolveReport};
use crate::linalg::{norm2, IdentityOperator, LinearOperator};
use crate::precond::{PrecondConfig, PrecondError, PrecondKind, Preconditioner};
use crate::rbf::{self, P1Rbf, RbfCoefficients, RbfData, RbfError, RbfModel};
use crate::state::SpaceTimeState;

/// Relative-step denominators are floored at this value.
pub const STEP_NORM_FLOOR: f64 = 1e-30;
/// Smallest step length tried by backtracking is `2^-MAX_HALVINGS`.
pub const MAX_HALVINGS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Damping {
    None,
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterConfig {
    pub nl_tol: f64,
    pub max_outer: usize,
    pub damping: Damping,
    pub linear: KrylovConfig,
    pub precond: PrecondConfig,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            nl_tol: 1e-4,
            max_outer: 20,
            damping: Damping::None,
            linear: KrylovConfig::default(),
            precond: PrecondConfig::default(),
        }
    }
}

impl OuterConfig {
    pub fn validate(&self) -> Result<(), DriverError> {
        if !(self.nl_tol > 0.0 && self.nl_tol < 1.0) {
            return Err(DriverError::InvalidConfig(format!("nl_tol must lie in (0,1), got {}", self.nl_tol)));
        }
        if self.max_outer == 0 {
            return Err(DriverError::InvalidConfig("max_outer must be at least 1".into()));
        }
        if !(self.precond.mu_floor > 0.0 && self.precond.mu_floor < 1.0) {
            return Err(DriverError::InvalidConfig(format!(
                "mu_floor must lie in (0,1), got {}",
                self.precond.mu_floor
            )));
        }
        self.linear
            .validate()
            .map_err(|e| DriverError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub outer_iterations: usize,
    pub converged: bool,
    pub initial_objective: f64,
    pub initial_residual_norm: f64,
    /// One entry per outer step, all aligned.
    pub solves: Vec<SolveReport>,
    pub objective_history: Vec<f64>,
    pub residual_norm_history: Vec<f64>,
    /// Relative step `‖z_{k+1} - z_k‖ / ‖z_k‖`.
    pub step_norm_history: Vec<f64>,
    pub step_lengths: Vec<f64>,
    pub final_iterate: Vec<f64>,
}

impl RunReport {
    /// Mean Krylov iterations per outer step.
    pub fn average_iterations(&self) -> f64 {
        self.average_first(self.solves.len())
    }

    /// Mean Krylov iterations over the first `count` outer steps (fewer if
    /// the run was shorter).
    pub fn average_first(&self, count: usize) -> f64 {
        let s = &self.solves[..count.min(self.solves.len())];
        if s.is_empty() {
            return 0.0;
        }
        s.iter().map(|r| r.iterations as f64).sum::<f64>() / s.len() as f64
    }
}

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Kkt(#[from] KktError),
    #[error(transparent)]
    Precond(#[from] PrecondError),
    #[error(transparent)]
    Rbf(#[from] RbfError),
    #[error("linear solve failed at outer step {k}: {source}")]
    LinearSolveFailed {
        k: usize,
        source: KrylovError,
        report: Box<RunReport>,
    },
    #[error("no step length reduced the KKT residual at outer step {k}")]
    LineSearchFailed { k: usize, report: Box<RunReport> },
    #[error("non-finite iterate at outer step {k}")]
    NonFinite { k: usize, report: Box<RunReport> },
}

impl DriverError {
    /// The partial report of a run that failed mid-way.
    pub fn partial_report(&self) -> Option<&RunReport> {
        match self {
            DriverError::LinearSolveFailed { report, .. }
            | DriverError::LineSearchFailed { report, .. }
            | DriverError::NonFinite { report, .. } => Some(report),
            _ => None,
        }
    }
}

/// Linearisation at the current iterate.
pub struct NewtonStep {
    pub op: Box<dyn LinearOperator>,
    pub precond: Box<dyn LinearOperator>,
    pub rhs: Vec<f64>,
}

/// A discretised KKT problem the outer loop can drive.
pub trait NewtonProblem {
    fn iterate(&self) -> &[f64];
    fn set_iterate(&mut self, z: &[f64]) -> Result<(), DriverError>;
    fn residual(&self) -> Result<Vec<f64>, DriverError>;
    fn objective(&self) -> f64;
    fn linearise(&self, precond: &PrecondConfig) -> Result<NewtonStep, DriverError>;
}

/// Finite-difference space-time problem; the iterate is `state.z`.
#[derive(Debug, Clone)]
pub struct FdProblem {
    pub state: SpaceTimeState,
    pub data: ObjectiveData,
    pub params: ProblemParams,
}

impl FdProblem {
    /// Starts from [`kkt::initial_state`].
    pub fn new(data: ObjectiveData, params: ProblemParams) -> Result<Self, DriverError> {
        params.validate()?;
        let state = kkt::initial_state(&data, &params)?;
        Ok(Self { state, data, params })
    }
}

impl NewtonProblem for FdProblem {
    fn iterate(&self) -> &[f64] {
        &self.state.z
    }

    fn set_iterate(&mut self, z: &[f64]) -> Result<(), DriverError> {
        self.state.z.copy_from_slice(z);
        Ok(())
    }

    fn residual(&self) -> Result<Vec<f64>, DriverError> {
        Ok(kkt::kkt_residual(&self.state, &self.data, &self.params)?)
    }

    fn objective(&self) -> f64 {
        kkt::objective(&self.state, &self.data, &self.params)
    }

    fn linearise(&self, cfg: &PrecondConfig) -> Result<NewtonStep, DriverError> {
        let sys = kkt::assemble_system(&self.state, &self.data, &self.params)?;
        let precond = Preconditioner::build(&sys, &self.state, cfg)?;
        precond.check(&self.state)?;
        let rhs = sys.rhs.clone();
        Ok(NewtonStep {
            op: Box::new(sys),
            precond: Box::new(precond),
            rhs,
        })
    }
}

/// RBF collocation problem; the iterate is the coefficient vector.
#[derive(Debug, Clone)]
pub struct RbfProblem {
    pub model: RbfModel,
    pub coeffs: RbfCoefficients,
    pub data: RbfData,
    pub params: ProblemParams,
}

impl RbfProblem {
    /// Starts from [`rbf::rbf_initial_coefficients`].
    pub fn new(model: RbfModel, data: RbfData, params: ProblemParams) -> Result<Self, DriverError> {
        let coeffs = rbf::rbf_initial_coefficients(&model, &data)?;
        Ok(Self {
            model,
            coeffs,
            data,
            params,
        })
    }
}

impl NewtonProblem for RbfProblem {
    fn iterate(&self) -> &[f64] {
        &self.coeffs.z
    }

    fn set_iterate(&mut self, z: &[f64]) -> Result<(), DriverError> {
        self.coeffs.z.copy_from_slice(z);
        Ok(())
    }

    fn residual(&self) -> Result<Vec<f64>, DriverError> {
        Ok(rbf::rbf_residual(&self.model, &self.coeffs, &self.data, &self.params)?)
    }

    fn objective(&self) -> f64 {
        rbf::rbf_objective(&self.model, &self.coeffs, &self.data, &self.params)
    }

    fn linearise(&self, cfg: &PrecondConfig) -> Result<NewtonStep, DriverError> {
        let sys = rbf::assemble_rbf_system(&self.model, &self.coeffs, &self.data, &self.params)?;
        let precond: Box<dyn LinearOperator> = match cfg.kind {
            PrecondKind::P1 => {
                let p = P1Rbf::new(&sys, cfg.mu_floor)?;
                p.check(&self.coeffs)?;
                Box::new(p)
            }
            PrecondKind::None => Box::new(IdentityOperator(sys.dim())),
            other => {
                return Err(DriverError::InvalidConfig(format!(
                    "preconditioner {other:?} is not available for the RBF discretisation"
                )))
            }
        };
        let rhs = sys.rhs.clone();
        Ok(NewtonStep {
            op: Box::new(sys),
            precond,
            rhs,
        })
    }
}

/// Runs the outer iteration until the relative step drops below `nl_tol`
/// or `max_outer` steps have been taken.
pub fn run<P: NewtonProblem>(problem: &mut P, cfg: &OuterConfig) -> Result<RunReport, DriverError> {
    cfg.validate()?;
    let mut report = RunReport {
        initial_objective: problem.objective(),
        initial_residual_norm: norm2(&problem.residual()?),
        ..Default::default()
    };
    let mut res_norm = report.initial_residual_norm;

    for k in 1..=cfg.max_outer {
        let step = problem.linearise(&cfg.precond)?;
        let solved = krylov::solve(step.op.as_ref(), step.precond.as_ref(), &step.rhs, None, &cfg.linear);
        let (s, solve) = match solved {
            Ok(v) => v,
            Err(source) => {
                report.final_iterate = problem.iterate().to_vec();
                return Err(DriverError::LinearSolveFailed {
                    k,
                    source,
                    report: Box::new(report),
                });
            }
        };
        drop(step);

        let z = problem.iterate().to_vec();
        let trial = |alpha: f64| -> Vec<f64> { z.iter().zip(&s).map(|(a, b)| a + alpha * b).collect() };
        let (alpha, new_norm) = match cfg.damping {
            Damping::None => {
                let zn = trial(1.0);
                problem.set_iterate(&zn)?;
                (1.0, norm2(&problem.residual()?))
            }
            Damping::Backtracking => {
                let mut accepted = None;
                for h in 0..=MAX_HALVINGS {
                    let alpha = 0.5f64.powi(h as i32);
                    problem.set_iterate(&trial(alpha))?;
                    let r = norm2(&problem.residual()?);
                    if r < res_norm {
                        accepted = Some((alpha, r));
                        break;
                    }
                }
                match accepted {
                    Some(a) => a,
                    None if res_norm == 0.0 => {
                        problem.set_iterate(&z)?;
                        (0.0, 0.0)
                    }
                    None => {
                        problem.set_iterate(&z)?;
                        report.final_iterate = z;
                        return Err(DriverError::LineSearchFailed {
                            k,
                            report: Box::new(report),
                        });
                    }
                }
            }
        };

        let step_norm = alpha.abs() * norm2(&s) / norm2(&z).max(STEP_NORM_FLOOR);
        report.outer_iterations = k;
        report.solves.push(solve);
        report.objective_history.push(problem.objective());
        report.residual_norm_history.push(new_norm);
        report.step_norm_history.push(step_norm);
        report.step_lengths.push(alpha);
        res_norm = new_norm;

        if !crate::linalg::all_finite(problem.iterate()) || !new_norm.is_finite() {
            report.final_iterate = problem.iterate().to_vec();
            return Err(DriverError::NonFinite {
                k,
                report: Box::new(report),
            });
        }
        if step_norm <= cfg.nl_tol {
            report.converged = true;
            break;
        }
    }
    report.final_iterate = problem.iterate().to_vec();
    Ok(report)
}
