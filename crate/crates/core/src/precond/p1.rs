//! Block-diagonal preconditioner `P1 = blkdiag(M̂, H_m, Ŝ1)` with the
//! matching Schur approximation `Ŝ1 = (q𝓐 + M1) M̂⁻¹ (q𝓐ᵀ + M2)`.

use nalgebra::DMatrix;

use super::eigen::{dense_constraint, jacobian_gram_blocks, sym_sqrt};
use super::{apply_hm_inverse, build_mu, jacobian_gram_diag, regularised_hy, BidiagonalFactors, PrecondError, DENSE_LIMIT};
use crate::kkt::{ControlMass, SaddleSystem};
use crate::linalg::{DenseLu, LinearOperator, SparseMatrix};
use crate::state::Layout;

/// P1 with diagonal `M1 = M2 = (βτ)^{-1/2} diag(M̂)^{1/2} diag(q²𝓙𝓜⁻¹𝓙ᵀ)^{1/2}`.
pub struct P1Diagonal {
    layout: Layout,
    pub mu: f64,
    /// Per-step scalar of `M̂`.
    pub mhat: Vec<f64>,
    /// Diagonal of `M1`, stacked over time-steps.
    pub m1: Vec<f64>,
    mass: ControlMass,
    beta_tau: f64,
    factors: BidiagonalFactors,
}

impl P1Diagonal {
    pub fn new(sys: &SaddleSystem, mu_floor: f64) -> Result<Self, PrecondError> {
        Self::with_mu(sys, build_mu(sys, mu_floor))
    }

    /// As [`P1Diagonal::new`] with a caller-chosen `μ`.
    pub fn with_mu(sys: &SaddleSystem, mu: f64) -> Result<Self, PrecondError> {
        let g = sys.grid;
        let n = g.n();
        let mhat = regularised_hy(sys, mu);
        let beta_tau = sys.params.beta * g.tau;
        let x = jacobian_gram_diag(sys);
        let m1: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, xi)| (mhat[i / n] * xi / beta_tau).sqrt())
            .collect();
        let blocks = sys
            .constraint
            .diagonal_blocks()
            .into_iter()
            .enumerate()
            .map(|(k, l)| l.scaled(sys.q).add_diagonal(&m1[k * n..(k + 1) * n]));
        let factors = BidiagonalFactors::new(g, sys.q, blocks.collect::<Vec<SparseMatrix>>())?;
        Ok(Self {
            layout: sys.layout,
            mu,
            mhat,
            m1,
            mass: ControlMass::new(&g, sys.params.q_operator)?,
            beta_tau,
            factors,
        })
    }

    /// `out = Ŝ1⁻¹ r`.
    pub fn apply_schur_inverse(&self, r: &[f64], out: &mut [f64]) {
        let n = self.layout.n;
        let mut t = vec![0.0; r.len()];
        self.factors.solve_lower(r, &mut t);
        for (i, v) in t.iter_mut().enumerate() {
            *v *= self.mhat[i / n];
        }
        self.factors.solve_upper_transposed(&t, out);
    }
}

impl LinearOperator for P1Diagonal {
    fn dim(&self) -> usize {
        self.layout.total()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.layout.n;
        let (xy, xm, xp) = self.layout.split(x);
        let (oy, om, op) = self.layout.split_mut(out);
        for (i, (o, v)) in oy.iter_mut().zip(xy).enumerate() {
            *o = v / self.mhat[i / n];
        }
        apply_hm_inverse(&self.mass, self.beta_tau, xm, om);
        self.apply_schur_inverse(xp, op);
    }
}

/// P1 with the full matching `M1 = M2ᵀ = (βτ)^{-1/2} X^{1/2} M̂^{1/2}`,
/// `X = q²𝓙𝓜⁻¹𝓙ᵀ`. Dense; only for small problems.
pub struct P1Full {
    layout: Layout,
    pub mu: f64,
    pub mhat: Vec<f64>,
    mass: ControlMass,
    beta_tau: f64,
    lu: DenseLu,
    lu_t: DenseLu,
}

/// Dense `q𝓐 + M1` for the full matching, together with `μ` and `M̂`.
pub(crate) fn full_matching_factor(sys: &SaddleSystem, mu_floor: f64) -> Result<(DMatrix<f64>, f64, Vec<f64>), PrecondError> {
    let g = sys.grid;
    let n = g.n();
    let dim = sys.layout.p_len();
    if dim > DENSE_LIMIT {
        return Err(PrecondError::TooLargeForDense { dim, limit: DENSE_LIMIT });
    }
    let mu = build_mu(sys, mu_floor);
    let mhat = regularised_hy(sys, mu);
    let beta_tau = sys.params.beta * g.tau;
    let mut f = dense_constraint(sys) * sys.q;
    for (k, xk) in jacobian_gram_blocks(sys)?.iter().enumerate() {
        let m1 = sym_sqrt(xk) * (mhat[k] / beta_tau).sqrt();
        let mut view = f.view_mut((k * n, k * n), (n, n));
        view += m1;
    }
    Ok((f, mu, mhat))
}

impl P1Full {
    pub fn new(sys: &SaddleSystem, mu_floor: f64) -> Result<Self, PrecondError> {
        let (f, mu, mhat) = full_matching_factor(sys, mu_floor)?;
        let lu_t = DenseLu::new(f.transpose()).map_err(|e| PrecondError::Singular(e.to_string()))?;
        let lu = DenseLu::new(f).map_err(|e| PrecondError::Singular(e.to_string()))?;
        Ok(Self {
            layout: sys.layout,
            mu,
            mhat,
            mass: ControlMass::new(&sys.grid, sys.params.q_operator)?,
            beta_tau: sys.params.beta * sys.grid.tau,
            lu,
            lu_t,
        })
    }
}

impl LinearOperator for P1Full {
    fn dim(&self) -> usize {
        self.layout.total()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.layout.n;
        let (xy, xm, xp) = self.layout.split(x);
        let (oy, om, op) = self.layout.split_mut(out);
        for (i, (o, v)) in oy.iter_mut().zip(xy).enumerate() {
            *o = v / self.mhat[i / n];
        }
        apply_hm_inverse(&self.mass, self.beta_tau, xm, om);
        op.copy_from_slice(xp);
        self.lu.solve_in_place(op);
        for (i, v) in op.iter_mut().enumerate() {
            *v *= self.mhat[i / n];
        }
        self.lu_t.solve_in_place(op);
    }
}
