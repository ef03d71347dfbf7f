//! Collocated residual and Newton blocks.
//!
//! Unknowns are stacked `[Y, M1, M2, P]`, each block step-major
//! (`Nt` consecutive length-`n` coefficient vectors). Residual rows follow the
//! same order: adjoint equation, two control equations, state equation, all
//! multiplied through by `τ`.

use nalgebra::{DMatrix, DVector, DVectorView, DVectorViewMut};

use super::{RbfError, RbfModel};
use crate::kkt::{Formulation, NewtonMode, ProblemParams, QOperator};
use crate::linalg::LinearOperator;
use crate::state::fingerprint_of;

/// Coefficients of the four fields over all steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfCoefficients {
    pub n: usize,
    pub n_t: usize,
    pub z: Vec<f64>,
}

impl RbfCoefficients {
    pub fn zeros(n: usize, n_t: usize) -> Self {
        Self {
            n,
            n_t,
            z: vec![0.0; 4 * n * n_t],
        }
    }

    pub fn from_vec(n: usize, n_t: usize, z: Vec<f64>) -> Result<Self, RbfError> {
        if z.len() != 4 * n * n_t {
            return Err(RbfError::DataMismatch(format!("expected {} coefficients, got {}", 4 * n * n_t, z.len())));
        }
        Ok(Self { n, n_t, z })
    }

    pub fn block_len(&self) -> usize {
        self.n * self.n_t
    }

    fn slot(&self, b: usize, k: usize) -> std::ops::Range<usize> {
        assert!((1..=self.n_t).contains(&k), "time index {k} outside 1..={}", self.n_t);
        let s = b * self.block_len() + (k - 1) * self.n;
        s..s + self.n
    }

    pub fn y(&self, k: usize) -> &[f64] {
        &self.z[self.slot(0, k)]
    }
    pub fn m1(&self, k: usize) -> &[f64] {
        &self.z[self.slot(1, k)]
    }
    pub fn m2(&self, k: usize) -> &[f64] {
        &self.z[self.slot(2, k)]
    }
    pub fn p(&self, k: usize) -> &[f64] {
        &self.z[self.slot(3, k)]
    }

    pub fn y_mut(&mut self, k: usize) -> &mut [f64] {
        let r = self.slot(0, k);
        &mut self.z[r]
    }

    /// `n × N_t` matrices `(Y, M1, M2, P)`.
    pub fn to_matrices(&self) -> [DMatrix<f64>; 4] {
        let l = self.block_len();
        std::array::from_fn(|b| DMatrix::from_column_slice(self.n, self.n_t, &self.z[b * l..(b + 1) * l]))
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint_of(&[], &self.z)
    }
}

/// Samples at the centres: initial and target images, optional tracking
/// trajectory (step-major, `N_t · n`).
#[derive(Debug, Clone)]
pub struct RbfData {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub ybar: Option<Vec<f64>>,
}

impl RbfData {
    pub fn new(model: &RbfModel, y0: Vec<f64>, y1: Vec<f64>, ybar: Option<Vec<f64>>) -> Result<Self, RbfError> {
        let n = model.n();
        if y0.len() != n || y1.len() != n {
            return Err(RbfError::DataMismatch(format!("images need {n} samples")));
        }
        if let Some(b) = &ybar {
            if b.len() != n * model.n_t {
                return Err(RbfError::DataMismatch(format!("tracking data needs {} samples", n * model.n_t)));
            }
        }
        if y0.iter().chain(&y1).chain(ybar.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(RbfError::DataMismatch("non-finite samples".into()));
        }
        Ok(Self { y0, y1, ybar })
    }

    fn ybar(&self, n: usize, k: usize) -> Option<&[f64]> {
        self.ybar.as_ref().map(|b| &b[(k - 1) * n..k * n])
    }
}

/// Values and derivatives of the current iterate at the centres, one
/// entry per step.
#[derive(Debug, Clone)]
pub struct RbfFields {
    pub y: Vec<DVector<f64>>,
    pub y_x1: Vec<DVector<f64>>,
    pub y_x2: Vec<DVector<f64>>,
    pub m1: Vec<DVector<f64>>,
    pub m2: Vec<DVector<f64>>,
    pub div_m: Vec<DVector<f64>>,
    pub p: Vec<DVector<f64>>,
    pub p_x1: Vec<DVector<f64>>,
    pub p_x2: Vec<DVector<f64>>,
}

impl RbfFields {
    pub fn evaluate(model: &RbfModel, c: &RbfCoefficients) -> Self {
        let cs = model.collocation();
        let (g1, g2) = model.grad_at_centres();
        let v = |m: &DMatrix<f64>, x: &[f64]| m * DVector::from_column_slice(x);
        let steps = 1..=c.n_t;
        Self {
            y: steps.clone().map(|k| v(cs, c.y(k))).collect(),
            y_x1: steps.clone().map(|k| v(g1, c.y(k))).collect(),
            y_x2: steps.clone().map(|k| v(g2, c.y(k))).collect(),
            m1: steps.clone().map(|k| v(cs, c.m1(k))).collect(),
            m2: steps.clone().map(|k| v(cs, c.m2(k))).collect(),
            div_m: steps.clone().map(|k| v(g1, c.m1(k)) + v(g2, c.m2(k))).collect(),
            p: steps.clone().map(|k| v(cs, c.p(k))).collect(),
            p_x1: steps.clone().map(|k| v(g1, c.p(k))).collect(),
            p_x2: steps.map(|k| v(g2, c.p(k))).collect(),
        }
    }
}

fn check(model: &RbfModel, c: &RbfCoefficients, data: &RbfData, params: &ProblemParams) -> Result<(), RbfError> {
    params.validate().map_err(|e| RbfError::InvalidParams(e.to_string()))?;
    if params.formulation == Formulation::AdvectionDTO {
        return Err(RbfError::InvalidParams("the RBF path discretises the continuity equation only".into()));
    }
    if c.n != model.n() || c.n_t != model.n_t {
        return Err(RbfError::DataMismatch(format!(
            "coefficients are {}x{}, model is {}x{}",
            c.n,
            c.n_t,
            model.n(),
            model.n_t
        )));
    }
    if data.y0.len() != model.n() {
        return Err(RbfError::DataMismatch("data sampled on different centres".into()));
    }
    Ok(())
}

/// `Q*Q` applied to the basis, at the centres.
fn qq_matrix(model: &RbfModel, q: QOperator) -> &DMatrix<f64> {
    match q {
        QOperator::Identity => model.collocation(),
        QOperator::Gradient => model.neg_laplacian_at_centres(),
    }
}

/// Scalar multiple of `C_s` forming the `(y, y)` block at step `k`.
fn ay_scalar(params: &ProblemParams, tau: f64, k: usize, n_t: usize) -> f64 {
    let mut a = params.delta * tau;
    if k == n_t {
        a += 1.0 / params.gamma;
    }
    a
}

/// Collocated KKT residual `[R_y, R_m1, R_m2, R_p]`.
pub fn rbf_residual(
    model: &RbfModel,
    c: &RbfCoefficients,
    data: &RbfData,
    params: &ProblemParams,
) -> Result<Vec<f64>, RbfError> {
    check(model, c, data, params)?;
    let (n, nt, tau) = (model.n(), model.n_t, model.tau);
    let f = RbfFields::evaluate(model, c);
    let qq = qq_matrix(model, params.q_operator);
    let l = n * nt;
    let mut r = vec![0.0; 4 * l];
    for k in 1..=nt {
        let i = k - 1;
        let at = |b: usize| b * l + i * n;

        let mut ry = &f.p[i] - (f.m1[i].component_mul(&f.p_x1[i]) + f.m2[i].component_mul(&f.p_x2[i])) * tau;
        if k < nt {
            ry -= &f.p[i + 1];
        } else {
            ry += (&f.y[i] - DVector::from_column_slice(&data.y1)) / params.gamma;
        }
        if params.delta > 0.0 {
            let d = match data.ybar(n, k) {
                Some(b) => &f.y[i] - DVector::from_column_slice(b),
                None => f.y[i].clone(),
            };
            ry += d * (params.delta * tau);
        }
        r[at(0)..at(0) + n].copy_from_slice(ry.as_slice());

        let bt = params.beta * tau;
        let rm1 = qq * DVector::from_column_slice(c.m1(k)) * bt - f.y[i].component_mul(&f.p_x1[i]) * tau;
        let rm2 = qq * DVector::from_column_slice(c.m2(k)) * bt - f.y[i].component_mul(&f.p_x2[i]) * tau;
        r[at(1)..at(1) + n].copy_from_slice(rm1.as_slice());
        r[at(2)..at(2) + n].copy_from_slice(rm2.as_slice());

        let prev = if k == 1 {
            DVector::from_column_slice(&data.y0)
        } else {
            f.y[i - 1].clone()
        };
        let flux = f.m1[i].component_mul(&f.y_x1[i]) + f.m2[i].component_mul(&f.y_x2[i]) + f.y[i].component_mul(&f.div_m[i]);
        let rp = &f.y[i] + flux * tau - prev;
        r[at(3)..at(3) + n].copy_from_slice(rp.as_slice());
    }
    Ok(r)
}

/// Quadrature with equal weights `1/n` at the centres.
pub fn rbf_objective(model: &RbfModel, c: &RbfCoefficients, data: &RbfData, params: &ProblemParams) -> f64 {
    let (n, nt, tau) = (model.n(), model.n_t, model.tau);
    let w = 1.0 / n as f64;
    let f = RbfFields::evaluate(model, c);
    let mut e = rbf_terminal_misfit(model, c, data, params);
    for k in 1..=nt {
        let i = k - 1;
        if params.delta > 0.0 {
            let d = match data.ybar(n, k) {
                Some(b) => &f.y[i] - DVector::from_column_slice(b),
                None => f.y[i].clone(),
            };
            e += 0.5 * params.delta * tau * w * d.norm_squared();
        }
        let reg = match params.q_operator {
            QOperator::Identity => f.m1[i].norm_squared() + f.m2[i].norm_squared(),
            QOperator::Gradient => {
                let (g1, g2) = model.grad_at_centres();
                [c.m1(k), c.m2(k)]
                    .iter()
                    .map(|m| {
                        let m = DVector::from_column_slice(m);
                        (g1 * &m).norm_squared() + (g2 * &m).norm_squared()
                    })
                    .sum()
            }
        };
        e += 0.5 * params.beta * tau * w * reg;
    }
    e
}

/// `1/(2γ) · (1/n) Σ_i (y_{N_t}(ξ_i) - y1_i)²`.
pub fn rbf_terminal_misfit(model: &RbfModel, c: &RbfCoefficients, data: &RbfData, params: &ProblemParams) -> f64 {
    let y = model.collocation() * DVector::from_column_slice(c.y(model.n_t));
    let d = y - DVector::from_column_slice(&data.y1);
    0.5 / params.gamma * d.norm_squared() / model.n() as f64
}

/// `y ≡ y0` on every step, `m = 0`, `p = 0`.
pub fn rbf_initial_coefficients(model: &RbfModel, data: &RbfData) -> Result<RbfCoefficients, RbfError> {
    let a = model.interpolate(&data.y0)?;
    let mut c = RbfCoefficients::zeros(model.n(), model.n_t);
    for k in 1..=model.n_t {
        c.y_mut(k).copy_from_slice(&a);
    }
    Ok(c)
}

/// Dense per-step blocks of the collocated Newton matrix. `by`, `bm1`, `bm2`
/// hold `B^{(k)}` in the transposed-subscript storage, so the adjoint and
/// control rows use their transposes.
#[derive(Debug, Clone)]
pub struct RbfSystem {
    pub n: usize,
    pub n_t: usize,
    pub tau: f64,
    pub params: ProblemParams,
    pub cs: DMatrix<f64>,
    pub cy: Vec<DMatrix<f64>>,
    pub by: Vec<DMatrix<f64>>,
    pub cm1: Vec<DMatrix<f64>>,
    pub cm2: Vec<DMatrix<f64>>,
    pub bm1: Vec<DMatrix<f64>>,
    pub bm2: Vec<DMatrix<f64>>,
    /// `A_{m11} = A_{m22}`, identical on every step.
    pub am: DMatrix<f64>,
    /// `A_y^{(k)} = ay[k] · C_s`.
    pub ay: Vec<f64>,
    /// `A_{y,m1}`, `A_{y,m2}`; absent in Gauss-Newton mode.
    pub aym: Option<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)>,
    pub rhs: Vec<f64>,
    pub fingerprint: u64,
}

pub fn assemble_rbf_system(
    model: &RbfModel,
    c: &RbfCoefficients,
    data: &RbfData,
    params: &ProblemParams,
) -> Result<RbfSystem, RbfError> {
    let rhs: Vec<f64> = rbf_residual(model, c, data, params)?.iter().map(|v| -v).collect();
    let (n, nt, tau) = (model.n(), model.n_t, model.tau);
    let f = RbfFields::evaluate(model, c);
    let cs = model.collocation().clone();
    let (g1, g2) = model.grad_at_centres();
    let rows = |d: &DVector<f64>, m: &DMatrix<f64>| DMatrix::from_diagonal(d) * m;

    let mut sys = RbfSystem {
        n,
        n_t: nt,
        tau,
        params: *params,
        am: qq_matrix(model, params.q_operator) * (params.beta * tau),
        ay: (1..=nt).map(|k| ay_scalar(params, tau, k, nt)).collect(),
        cy: Vec::with_capacity(nt),
        by: Vec::with_capacity(nt),
        cm1: Vec::with_capacity(nt),
        cm2: Vec::with_capacity(nt),
        bm1: Vec::with_capacity(nt),
        bm2: Vec::with_capacity(nt),
        aym: None,
        rhs,
        fingerprint: c.fingerprint(),
        cs,
    };
    let mut aym1 = Vec::new();
    let mut aym2 = Vec::new();
    for i in 0..nt {
        let adv = (rows(&f.m1[i], g1) + rows(&f.m2[i], g2)) * tau;
        sys.cy.push(&sys.cs + &adv + rows(&f.div_m[i], &sys.cs) * tau);
        sys.by.push((&sys.cs - &adv).transpose());
        sys.cm1.push((rows(&f.y_x1[i], &sys.cs) + rows(&f.y[i], g1)) * tau);
        sys.cm2.push((rows(&f.y_x2[i], &sys.cs) + rows(&f.y[i], g2)) * tau);
        sys.bm1.push((rows(&f.y[i], g1) * -tau).transpose());
        sys.bm2.push((rows(&f.y[i], g2) * -tau).transpose());
        if params.newton_mode == NewtonMode::FullNewton {
            aym1.push(rows(&f.p_x1[i], &sys.cs) * -tau);
            aym2.push(rows(&f.p_x2[i], &sys.cs) * -tau);
        }
    }
    if params.newton_mode == NewtonMode::FullNewton {
        sys.aym = Some((aym1, aym2));
    }
    if sys.cy.iter().chain(&sys.cm1).chain(&sys.cm2).any(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(RbfError::IllConditioned("non-finite entries in the Newton blocks".into()));
    }
    Ok(sys)
}

/// `out += alpha · A x` (or `Aᵀ x`).
pub(crate) fn gemv(out: &mut [f64], alpha: f64, a: &DMatrix<f64>, x: &[f64], transpose: bool) {
    let xv = DVectorView::from_slice(x, x.len());
    let mut ov = DVectorViewMut::from_slice(out, a.nrows());
    if transpose {
        ov.gemv_tr(alpha, a, &xv, 1.0);
    } else {
        ov.gemv(alpha, a, &xv, 1.0);
    }
}

impl RbfSystem {
    pub fn block_len(&self) -> usize {
        self.n * self.n_t
    }

    fn at(&self, b: usize, k: usize) -> std::ops::Range<usize> {
        let s = b * self.block_len() + (k - 1) * self.n;
        s..s + self.n
    }

    /// Largest entry of `K - Kᵀ` relative to the largest entry of `K`.
    pub fn asymmetry(&self) -> f64 {
        let k = crate::linalg::to_dense(self);
        let d = (&k - k.transpose()).abs().max();
        d / k.abs().max().max(f64::MIN_POSITIVE)
    }
}

impl LinearOperator for RbfSystem {
    fn dim(&self) -> usize {
        4 * self.block_len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let nt = self.n_t;
        for k in 1..=nt {
            let i = k - 1;
            let (xy, xm1, xm2, xp) = (&x[self.at(0, k)], &x[self.at(1, k)], &x[self.at(2, k)], &x[self.at(3, k)]);

            let o = &mut out[self.at(0, k)];
            gemv(o, self.ay[i], &self.cs, xy, false);
            gemv(o, 1.0, &self.by[i], xp, true);
            if k < nt {
                gemv(o, -1.0, &self.cs, &x[self.at(3, k + 1)], false);
            }
            if let Some((a1, a2)) = &self.aym {
                gemv(o, 1.0, &a1[i], xm1, false);
                gemv(o, 1.0, &a2[i], xm2, false);
            }

            for (b, xm, bm) in [(1, xm1, &self.bm1[i]), (2, xm2, &self.bm2[i])] {
                let o = &mut out[self.at(b, k)];
                gemv(o, 1.0, &self.am, xm, false);
                gemv(o, 1.0, bm, xp, true);
                if let Some((a1, a2)) = &self.aym {
                    gemv(o, 1.0, if b == 1 { &a1[i] } else { &a2[i] }, xy, false);
                }
            }

            let o = &mut out[self.at(3, k)];
            gemv(o, 1.0, &self.cy[i], xy, false);
            if k > 1 {
                gemv(o, -1.0, &self.cs, &x[self.at(0, k - 1)], false);
            }
            gemv(o, 1.0, &self.cm1[i], xm1, false);
            gemv(o, 1.0, &self.cm2[i], xm2, false);
        }
    }
}
