//! Discrete objective, first-order conditions and the Newton saddle-point
//! systems.
//!
//! The discrete Lagrangian is
//!
//! ```text
//! E(y, m) + q pᵀ(𝓐(m) y - d)
//! E = 1/(2γ) |y^{N_t} - y1|²_M + δτ/2 |y - ybar|²_M̄ + βτ/2 mᵀ𝓜 m
//! ```
//!
//! with `M = h² I`, `𝓜 = blkdiag(W)` and `q = τh²` for the continuity
//! discretise-then-optimise form (`q = 1` otherwise). The Newton matrix is
//!
//! ```text
//! [ H_y   q𝓖    q𝓐ᵀ ]
//! [ q𝓖ᵀ   H_m   q𝓙ᵀ ]
//! [ q𝓐    q𝓙    0   ]
//! ```
//!
//! where the `𝓖(p)` blocks are present only in full Newton mode.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::GridSpec;
use crate::linalg::{axpy, LinearOperator, SparseLu, SparseMatrix};
use crate::state::{Layout, SpaceTimeState};
use crate::transport::{
    apply_b, constraint_rhs, forward_solve, BlockBidiagonalOperator, JacobianOperator, MultiplierCoupling,
    TransportError, TransportForm,
};

#[derive(Debug, Error)]
pub enum KktError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("full Newton is only available for the continuity optimise-then-discretise formulation")]
    IncompatibleMode,
    #[error("data does not match the grid: {0}")]
    DataMismatch(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("control mass matrix could not be factorised: {0}")]
    Mass(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QOperator {
    Identity,
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Formulation {
    ContinuityDTO,
    ContinuityOTD,
    AdvectionDTO,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NewtonMode {
    GaussNewton,
    FullNewton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub q_operator: QOperator,
    pub formulation: Formulation,
    pub newton_mode: NewtonMode,
}

impl Default for ProblemParams {
    fn default() -> Self {
        Self {
            beta: 1e-2,
            gamma: 1.0,
            delta: 0.0,
            q_operator: QOperator::Identity,
            formulation: Formulation::ContinuityDTO,
            newton_mode: NewtonMode::GaussNewton,
        }
    }
}

impl ProblemParams {
    pub fn validate(&self) -> Result<(), KktError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(KktError::InvalidParams(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(KktError::InvalidParams(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(KktError::InvalidParams(format!("delta must be non-negative, got {}", self.delta)));
        }
        if self.newton_mode == NewtonMode::FullNewton && self.formulation != Formulation::ContinuityOTD {
            return Err(KktError::IncompatibleMode);
        }
        Ok(())
    }

    pub fn form(&self) -> TransportForm {
        match self.formulation {
            Formulation::AdvectionDTO => TransportForm::Advection,
            _ => TransportForm::Continuity,
        }
    }

    /// Scalar `𝓠` multiplying the constraint rows.
    pub fn q_scale(&self, grid: &GridSpec) -> f64 {
        match self.formulation {
            Formulation::ContinuityDTO => grid.tau * grid.h * grid.h,
            _ => 1.0,
        }
    }

    /// Per-step multiple of the identity forming the `(y, y)` block:
    /// `δτh²` on every step plus `γ⁻¹h²` on the last.
    pub fn hy_diag(&self, grid: &GridSpec) -> Vec<f64> {
        let h2 = grid.h * grid.h;
        (1..=grid.n_t)
            .map(|k| {
                let mut v = self.delta * grid.tau * h2;
                if k == grid.n_t {
                    v += h2 / self.gamma;
                }
                v
            })
            .collect()
    }
}

/// Target image, optional tracking trajectory and the initial image.
#[derive(Debug, Clone)]
pub struct ObjectiveData {
    pub grid: GridSpec,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    /// `N_t` stacked frames; only read when `δ > 0`.
    pub ybar: Option<Vec<f64>>,
}

impl ObjectiveData {
    pub fn new(grid: GridSpec, y0: Vec<f64>, y1: Vec<f64>, ybar: Option<Vec<f64>>) -> Result<Self, KktError> {
        let n = grid.n();
        if y0.len() != n || y1.len() != n {
            return Err(KktError::DataMismatch(format!(
                "images have {} and {} values, grid has {n}",
                y0.len(),
                y1.len()
            )));
        }
        if let Some(yb) = &ybar {
            if yb.len() != n * grid.n_t {
                return Err(KktError::DataMismatch(format!(
                    "trajectory has {} values, expected {}",
                    yb.len(),
                    n * grid.n_t
                )));
            }
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&y0) || !finite(&y1) || !ybar.as_deref().map_or(true, finite) {
            return Err(KktError::DataMismatch("non-finite image values".into()));
        }
        Ok(Self { grid, y0, y1, ybar })
    }

    fn ybar_at(&self, idx: usize) -> f64 {
        self.ybar.as_ref().map_or(0.0, |v| v[idx])
    }
}

/// The per-step control weight `W` and `𝓜 = blkdiag(W, ..., W)`.
#[derive(Debug)]
pub struct ControlMass {
    pub kind: QOperator,
    grid: GridSpec,
    w: SparseMatrix,
    lu: Option<SparseLu>,
}

/// Shift making the periodic Laplacian weight invertible, relative to `h²`.
pub const GRADIENT_SHIFT: f64 = 1e-8;

impl ControlMass {
    pub fn new(grid: &GridSpec, kind: QOperator) -> Result<Self, KktError> {
        let h2 = grid.h * grid.h;
        match kind {
            QOperator::Identity => Ok(Self {
                kind,
                grid: *grid,
                w: SparseMatrix::from_diagonal(&vec![h2; grid.n()]),
                lu: None,
            }),
            QOperator::Gradient => {
                let w = grid
                    .neg_laplacian_h2_matrix()
                    .add_diagonal(&vec![GRADIENT_SHIFT * h2; grid.n()]);
                let lu = w.factorize().map_err(|e| KktError::Mass(e.to_string()))?;
                Ok(Self {
                    kind,
                    grid: *grid,
                    w,
                    lu: Some(lu),
                })
            }
        }
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.w
    }

    pub fn diag(&self) -> Vec<f64> {
        self.w.diagonal()
    }

    /// `out = 𝓜 m` over a whole velocity sequence (any multiple of `n`).
    pub fn apply(&self, m: &[f64], out: &mut [f64]) {
        let n = self.grid.n();
        for (mi, oi) in m.chunks(n).zip(out.chunks_mut(n)) {
            self.w.matvec(mi, oi);
        }
    }

    /// `m <- 𝓜⁻¹ m` in place.
    pub fn solve_in_place(&self, m: &mut [f64]) {
        let n = self.grid.n();
        match &self.lu {
            None => {
                let inv = 1.0 / (self.grid.h * self.grid.h);
                m.iter_mut().for_each(|v| *v *= inv);
            }
            Some(lu) => m.chunks_mut(n).for_each(|c| lu.solve_in_place(c)),
        }
    }
}

fn adjoint_apply(params: &ProblemParams, a: &BlockBidiagonalOperator, p: &[f64], out: &mut [f64]) {
    if params.formulation == Formulation::ContinuityOTD {
        apply_b(&a.grid, &a.m, p, out);
    } else {
        a.apply_adjoint(p, out);
    }
}

fn check_state(state: &SpaceTimeState, data: &ObjectiveData) -> Result<(), KktError> {
    if state.grid != data.grid {
        return Err(KktError::DataMismatch("state and data grids differ".into()));
    }
    if state.z.len() != Layout::new(&state.grid).total() {
        return Err(KktError::DataMismatch("state vector has the wrong length".into()));
    }
    Ok(())
}

pub fn objective(state: &SpaceTimeState, data: &ObjectiveData, params: &ProblemParams) -> f64 {
    let g = &state.grid;
    let n = g.n();
    let h2 = g.h * g.h;
    let y = state.y();
    let last = &y[(g.n_t - 1) * n..];
    let misfit: f64 = last.iter().zip(&data.y1).map(|(a, b)| (a - b) * (a - b)).sum();
    let mut e = 0.5 / params.gamma * h2 * misfit;
    if params.delta > 0.0 {
        let track: f64 = y
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let d = v - data.ybar_at(i);
                d * d
            })
            .sum();
        e += 0.5 * params.delta * g.tau * h2 * track;
    }
    let mass = ControlMass::new(g, params.q_operator).expect("control mass");
    let m = state.m();
    let mut wm = vec![0.0; m.len()];
    mass.apply(m, &mut wm);
    e + 0.5 * params.beta * g.tau * crate::linalg::dot(m, &wm)
}

/// Final-time misfit `1/(2γ) |y^{N_t} - y1|²_M`.
pub fn terminal_misfit(state: &SpaceTimeState, data: &ObjectiveData, params: &ProblemParams) -> f64 {
    let g = &state.grid;
    let n = g.n();
    let last = &state.y()[(g.n_t - 1) * n..];
    let s: f64 = last.iter().zip(&data.y1).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 / params.gamma * g.h * g.h * s
}

/// `E + q pᵀ(𝓐y - d)`.
pub fn lagrangian(state: &SpaceTimeState, data: &ObjectiveData, params: &ProblemParams) -> f64 {
    let g = &state.grid;
    let a = BlockBidiagonalOperator::new(*g, params.form(), state.m());
    let mut c = a.apply_vec(state.y());
    axpy(-1.0, &constraint_rhs(g, &state.y0), &mut c);
    objective(state, data, params) + params.q_scale(g) * crate::linalg::dot(state.p(), &c)
}

/// Gradient of the Lagrangian, stacked as `[r_y, r_m, r_p]`.
pub fn kkt_residual(state: &SpaceTimeState, data: &ObjectiveData, params: &ProblemParams) -> Result<Vec<f64>, KktError> {
    params.validate()?;
    check_state(state, data)?;
    let g = &state.grid;
    let n = g.n();
    let layout = state.layout();
    let q = params.q_scale(g);
    let h2 = g.h * g.h;
    let a = BlockBidiagonalOperator::new(*g, params.form(), state.m());
    let j = JacobianOperator::new(*g, params.form(), state.y());
    let mass = ControlMass::new(g, params.q_operator)?;

    let mut r = vec![0.0; layout.total()];
    let (ry, rm, rp) = layout.split_mut(&mut r);

    adjoint_apply(params, &a, state.p(), ry);
    ry.iter_mut().for_each(|v| *v *= q);
    let y = state.y();
    let last = (g.n_t - 1) * n;
    for i in 0..n {
        ry[last + i] += h2 / params.gamma * (y[last + i] - data.y1[i]);
    }
    if params.delta > 0.0 {
        for (i, v) in ry.iter_mut().enumerate() {
            *v += params.delta * g.tau * h2 * (y[i] - data.ybar_at(i));
        }
    }

    j.apply_transpose(state.p(), rm);
    rm.iter_mut().for_each(|v| *v *= q);
    let mut wm = vec![0.0; layout.m_len()];
    mass.apply(state.m(), &mut wm);
    axpy(params.beta * g.tau, &wm, rm);

    a.apply_forward(y, rp);
    axpy(-1.0, &constraint_rhs(g, &state.y0), rp);
    rp.iter_mut().for_each(|v| *v *= q);
    Ok(r)
}

/// Canonical feasible start: `m = 0`, `y` transported from `y0`, `p = 0`.
pub fn initial_state(data: &ObjectiveData, params: &ProblemParams) -> Result<SpaceTimeState, KktError> {
    let g = data.grid;
    let mut s = SpaceTimeState::zeros(g, data.y0.clone());
    let y = forward_solve(&g, params.form(), s.m(), &data.y0)?;
    s.y_mut().copy_from_slice(&y);
    Ok(s)
}

/// Matrix-free Newton / Gauss-Newton operator plus its right-hand side.
#[derive(Debug)]
pub struct SaddleSystem {
    pub grid: GridSpec,
    pub params: ProblemParams,
    pub layout: Layout,
    pub q: f64,
    /// Per-step scalar of the `(y, y)` block.
    pub hy: Vec<f64>,
    pub constraint: BlockBidiagonalOperator,
    pub jacobian: JacobianOperator,
    pub coupling: Option<MultiplierCoupling>,
    pub mass: ControlMass,
    pub rhs: Vec<f64>,
}

pub fn assemble_system(state: &SpaceTimeState, data: &ObjectiveData, params: &ProblemParams) -> Result<SaddleSystem, KktError> {
    params.validate()?;
    let residual = kkt_residual(state, data, params)?;
    let g = state.grid;
    let coupling = match params.newton_mode {
        NewtonMode::FullNewton => Some(MultiplierCoupling::new(g, state.p())),
        NewtonMode::GaussNewton => None,
    };
    Ok(SaddleSystem {
        grid: g,
        params: *params,
        layout: state.layout(),
        q: params.q_scale(&g),
        hy: params.hy_diag(&g),
        constraint: BlockBidiagonalOperator::new(g, params.form(), state.m()),
        jacobian: JacobianOperator::new(g, params.form(), state.y()),
        coupling,
        mass: ControlMass::new(&g, params.q_operator)?,
        rhs: residual.into_iter().map(|v| -v).collect(),
    })
}

impl SaddleSystem {
    /// `out = H_m x` over a velocity sequence.
    pub fn apply_hm(&self, x: &[f64], out: &mut [f64]) {
        self.mass.apply(x, out);
        let c = self.params.beta * self.grid.tau;
        out.iter_mut().for_each(|v| *v *= c);
    }
}

impl LinearOperator for SaddleSystem {
    fn dim(&self) -> usize {
        self.layout.total()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let l = self.layout;
        let n = self.grid.n();
        let q = self.q;
        let (xy, xm, xp) = l.split(x);
        let (oy, om, op) = l.split_mut(out);

        adjoint_apply(&self.params, &self.constraint, xp, oy);
        for k in 0..self.grid.n_t {
            for i in k * n..(k + 1) * n {
                oy[i] = q * oy[i] + self.hy[k] * xy[i];
            }
        }

        self.jacobian.apply_transpose(xp, om);
        om.iter_mut().for_each(|v| *v *= q);
        let mut t = vec![0.0; l.m_len()];
        self.apply_hm(xm, &mut t);
        axpy(1.0, &t, om);

        self.constraint.apply_forward(xy, op);
        let mut jy = vec![0.0; l.p_len()];
        self.jacobian.apply(xm, &mut jy);
        for (o, j) in op.iter_mut().zip(&jy) {
            *o = q * (*o + j);
        }

        if let Some(gp) = &self.coupling {
            let mut ty = vec![0.0; l.y_len()];
            gp.apply(xm, &mut ty);
            axpy(q, &ty, oy);
            gp.apply_transpose(xy, &mut t);
            axpy(q, &t, om);
        }
    }
}
