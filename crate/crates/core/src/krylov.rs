//! Preconditioned CGS and restarted GMRES.
//!
//! Both methods apply the preconditioner on the right, so the residual they
//! track is the residual of the original system. The true residual
//! `|b - A x| / |b|` is recomputed before convergence is declared.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{axpy, dot, norm2, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KrylovMethod {
    #[serde(alias = "cgs")]
    CGS,
    #[serde(alias = "gmres")]
    GMRES,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrylovConfig {
    pub method: KrylovMethod,
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
    pub record_history: bool,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            method: KrylovMethod::GMRES,
            tol: 1e-6,
            max_iter: 500,
            restart: 50,
            record_history: false,
        }
    }
}

impl KrylovConfig {
    pub fn validate(&self) -> Result<(), KrylovError> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(KrylovError::InvalidConfig(format!("tol must lie in (0, 1), got {}", self.tol)));
        }
        if self.max_iter == 0 || self.restart == 0 {
            return Err(KrylovError::InvalidConfig("max_iter and restart must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum KrylovError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("operator, preconditioner and vectors disagree in dimension")]
    DimensionMismatch,
    #[error("CGS breakdown at iteration {iteration}")]
    Breakdown {
        iteration: usize,
        x: Vec<f64>,
        report: SolveReport,
    },
    #[error("non-finite value encountered at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("no convergence within {} iterations (relative residual {:.3e})", report.iterations, report.relative_residual)]
    MaxIterExceeded { x: Vec<f64>, report: SolveReport },
}

fn true_residual(op: &dyn LinearOperator, b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut r = op.apply_vec(x);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    r
}

/// Solve `op x = b` with approximate inverse `precond`, starting from `x0`
/// (zeros when `None`).
pub fn solve(
    op: &dyn LinearOperator,
    precond: &dyn LinearOperator,
    b: &[f64],
    x0: Option<&[f64]>,
    cfg: &KrylovConfig,
) -> Result<(Vec<f64>, SolveReport), KrylovError> {
    cfg.validate()?;
    let n = op.dim();
    if precond.dim() != n || b.len() != n || x0.is_some_and(|x| x.len() != n) {
        return Err(KrylovError::DimensionMismatch);
    }
    if !crate::linalg::all_finite(b) {
        return Err(KrylovError::NonFinite { iteration: 0 });
    }
    let x = x0.map_or_else(|| vec![0.0; n], |x| x.to_vec());
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        let report = SolveReport {
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
            residual_history: if cfg.record_history { vec![0.0] } else { vec![] },
        };
        return Ok((vec![0.0; n], report));
    }
    match cfg.method {
        KrylovMethod::CGS => cgs(op, precond, b, x, bnorm, cfg),
        KrylovMethod::GMRES => gmres(op, precond, b, x, bnorm, cfg),
    }
}

fn cgs(
    op: &dyn LinearOperator,
    precond: &dyn LinearOperator,
    b: &[f64],
    mut x: Vec<f64>,
    bnorm: f64,
    cfg: &KrylovConfig,
) -> Result<(Vec<f64>, SolveReport), KrylovError> {
    let n = b.len();
    let mut r = true_residual(op, b, &x);
    let mut rel = norm2(&r) / bnorm;
    let mut history = Vec::new();
    if cfg.record_history {
        history.push(rel);
    }
    if rel <= cfg.tol {
        let report = SolveReport {
            iterations: 0,
            relative_residual: rel,
            converged: true,
            residual_history: history,
        };
        return Ok((x, report));
    }
    let rt = r.clone();
    let mut rho_prev = 1.0;
    let mut u = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut ph = vec![0.0; n];
    let mut vh = vec![0.0; n];
    let mut uh = vec![0.0; n];
    let mut qh = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut best = (rel, x.clone());

    for it in 1..=cfg.max_iter {
        let rho = dot(&rt, &r);
        if rho == 0.0 || !rho.is_finite() {
            return Err(breakdown(op, b, bnorm, best.1, it, history));
        }
        if it == 1 {
            u.copy_from_slice(&r);
            p.copy_from_slice(&u);
        } else {
            let beta = rho / rho_prev;
            for i in 0..n {
                u[i] = r[i] + beta * q[i];
                p[i] = u[i] + beta * (q[i] + beta * p[i]);
            }
        }
        precond.apply(&p, &mut ph);
        op.apply(&ph, &mut vh);
        let sigma = dot(&rt, &vh);
        if sigma == 0.0 || !sigma.is_finite() {
            return Err(breakdown(op, b, bnorm, best.1, it, history));
        }
        let alpha = rho / sigma;
        for i in 0..n {
            q[i] = u[i] - alpha * vh[i];
            tmp[i] = u[i] + q[i];
        }
        precond.apply(&tmp, &mut uh);
        axpy(alpha, &uh, &mut x);
        op.apply(&uh, &mut qh);
        axpy(-alpha, &qh, &mut r);
        rho_prev = rho;

        rel = norm2(&r) / bnorm;
        if !rel.is_finite() || !crate::linalg::all_finite(&x) {
            return Err(KrylovError::NonFinite { iteration: it });
        }
        if cfg.record_history {
            history.push(rel);
        }
        if rel < best.0 {
            best = (rel, x.clone());
        }
        if rel <= cfg.tol {
            // the recursion residual can drift from the true one; trust only the latter
            let tr = true_residual(op, b, &x);
            let trel = norm2(&tr) / bnorm;
            if trel <= cfg.tol {
                let report = SolveReport {
                    iterations: it,
                    relative_residual: trel,
                    converged: true,
                    residual_history: history,
                };
                return Ok((x, report));
            }
            r = tr;
        }
    }
    let tr = true_residual(op, b, &best.1);
    let report = SolveReport {
        iterations: cfg.max_iter,
        relative_residual: norm2(&tr) / bnorm,
        converged: false,
        residual_history: history,
    };
    Err(KrylovError::MaxIterExceeded { x: best.1, report })
}

fn breakdown(op: &dyn LinearOperator, b: &[f64], bnorm: f64, x: Vec<f64>, iteration: usize, history: Vec<f64>) -> KrylovError {
    let tr = true_residual(op, b, &x);
    KrylovError::Breakdown {
        iteration,
        report: SolveReport {
            iterations: iteration,
            relative_residual: norm2(&tr) / bnorm,
            converged: false,
            residual_history: history,
        },
        x,
    }
}

fn gmres(
    op: &dyn LinearOperator,
    precond: &dyn LinearOperator,
    b: &[f64],
    mut x: Vec<f64>,
    bnorm: f64,
    cfg: &KrylovConfig,
) -> Result<(Vec<f64>, SolveReport), KrylovError> {
    let n = b.len();
    let m = cfg.restart.min(cfg.max_iter).min(n.max(1));
    let mut history = Vec::new();
    let mut total = 0usize;
    let mut z = vec![0.0; n];
    let mut w = vec![0.0; n];

    let mut r = true_residual(op, b, &x);
    let mut rel = norm2(&r) / bnorm;
    if cfg.record_history {
        history.push(rel);
    }
    loop {
        if rel <= cfg.tol {
            let report = SolveReport {
                iterations: total,
                relative_residual: rel,
                converged: true,
                residual_history: history,
            };
            return Ok((x, report));
        }
        if total >= cfg.max_iter {
            let report = SolveReport {
                iterations: total,
                relative_residual: rel,
                converged: false,
                residual_history: history,
            };
            return Err(KrylovError::MaxIterExceeded { x, report });
        }

        let beta = norm2(&r);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        // Hessenberg columns, already rotated into upper-triangular form
        let mut hcols: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut cs: Vec<f64> = Vec::with_capacity(m);
        let mut sn: Vec<f64> = Vec::with_capacity(m);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut steps = 0;

        for j in 0..m {
            if total >= cfg.max_iter {
                break;
            }
            precond.apply(&basis[j], &mut z);
            op.apply(&z, &mut w);
            let mut h = vec![0.0; j + 2];
            for (i, v) in basis.iter().enumerate() {
                h[i] = dot(&w, v);
                axpy(-h[i], v, &mut w);
            }
            let hn = norm2(&w);
            h[j + 1] = hn;
            if !hn.is_finite() || !crate::linalg::all_finite(&h) {
                return Err(KrylovError::NonFinite { iteration: total + 1 });
            }
            for i in 0..j {
                let t = cs[i] * h[i] + sn[i] * h[i + 1];
                h[i + 1] = -sn[i] * h[i] + cs[i] * h[i + 1];
                h[i] = t;
            }
            let denom = h[j].hypot(h[j + 1]);
            let (c, s) = if denom == 0.0 { (1.0, 0.0) } else { (h[j] / denom, h[j + 1] / denom) };
            cs.push(c);
            sn.push(s);
            h[j] = denom;
            h[j + 1] = 0.0;
            g[j + 1] = -s * g[j];
            g[j] *= c;
            hcols.push(h);
            steps = j + 1;
            total += 1;
            let est = g[j + 1].abs() / bnorm;
            if cfg.record_history {
                history.push(est);
            }
            if est <= cfg.tol || hn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }

        // back substitution for the coefficients, then x += M⁻¹ V y
        let mut yv = vec![0.0; steps];
        for i in (0..steps).rev() {
            let mut s = g[i];
            for k in i + 1..steps {
                s -= hcols[k][i] * yv[k];
            }
            yv[i] = if hcols[i][i] != 0.0 { s / hcols[i][i] } else { 0.0 };
        }
        let mut comb = vec![0.0; n];
        for (k, c) in yv.iter().enumerate() {
            axpy(*c, &basis[k], &mut comb);
        }
        precond.apply(&comb, &mut z);
        axpy(1.0, &z, &mut x);
        if !crate::linalg::all_finite(&x) {
            return Err(KrylovError::NonFinite { iteration: total });
        }
        r = true_residual(op, b, &x);
        rel = norm2(&r) / bnorm;
    }
}
