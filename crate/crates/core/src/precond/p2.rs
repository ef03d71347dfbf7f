//! Permuted block preconditioner P2.
//!
//! With `w = [w1, w2, w3]` the application is
//!
//! ```text
//! v2 = H_m⁻¹ w2
//! v1 = 𝓐⁻¹ (q⁻¹ w3 - 𝓙 v2)
//! v3 = Ŝ2⁻¹ (H_y v1 - w1)
//! ```
//!
//! where `Ŝ2⁻¹ = (q𝓐 + M_r)⁻¹ q𝓐 (q𝓐ᵀ + M_l)⁻¹`, `M_l = H_y` and
//! `M_r = (βτ)⁻¹ q² 𝓙𝓜⁻¹𝓙ᵀ`.

use super::{apply_hm_inverse, BidiagonalFactors, PrecondError, RightMatching};
use crate::kkt::{ControlMass, QOperator, SaddleSystem};
use crate::linalg::LinearOperator;
use crate::state::Layout;
use crate::transport::{BlockBidiagonalOperator, JacobianOperator};

pub struct P2 {
    layout: Layout,
    q: f64,
    hy: Vec<f64>,
    beta_tau: f64,
    mass: ControlMass,
    constraint: BlockBidiagonalOperator,
    jacobian: JacobianOperator,
    forward: BidiagonalFactors,
    left: BidiagonalFactors,
    right: BidiagonalFactors,
    schur_inverse: Option<Box<dyn LinearOperator + Send>>,
    /// `M_r` variant actually used (the full one is only available for diagonal `W`).
    pub right_matching: RightMatching,
}

impl P2 {
    pub fn new(sys: &SaddleSystem, right_matching: RightMatching) -> Result<Self, PrecondError> {
        let g = sys.grid;
        let n = g.n();
        let q = sys.q;
        let beta_tau = sys.params.beta * g.tau;
        // exact 𝓜⁻¹ inside M_r would be dense for the Laplacian weight
        let right_matching = match sys.params.q_operator {
            QOperator::Identity => right_matching,
            QOperator::Gradient => RightMatching::DiagMass,
        };
        let winv: Vec<f64> = sys.mass.diag().iter().map(|w| 1.0 / w).collect();
        let winv2: Vec<f64> = winv.iter().chain(winv.iter()).copied().collect();
        let ls = sys.constraint.diagonal_blocks();
        let forward = BidiagonalFactors::new(g, 1.0, ls.iter().cloned())?;
        let left = BidiagonalFactors::new(
            g,
            q,
            ls.iter().enumerate().map(|(k, l)| l.scaled(q).add_diagonal(&vec![sys.hy[k]; n])),
        )?;
        let c = q * q / beta_tau;
        let right = BidiagonalFactors::new(
            g,
            q,
            ls.iter().enumerate().map(|(k, l)| {
                let mr = sys.jacobian.step_matrix(k + 1).weighted_gram(&winv2);
                l.lin_comb(q, c, &mr)
            }),
        )?;
        Ok(Self {
            layout: sys.layout,
            q,
            hy: sys.hy.clone(),
            beta_tau,
            mass: ControlMass::new(&g, sys.params.q_operator)?,
            constraint: sys.constraint.clone(),
            jacobian: sys.jacobian.clone(),
            forward,
            left,
            right,
            schur_inverse: None,
            right_matching,
        })
    }

    /// Replace `Ŝ2⁻¹` by an arbitrary operator, e.g. the exact permuted Schur
    /// complement inverse in tests.
    pub fn with_schur_inverse(mut self, op: Box<dyn LinearOperator + Send>) -> Self {
        self.schur_inverse = Some(op);
        self
    }

    pub fn apply_schur_inverse(&self, r: &[f64], out: &mut [f64]) {
        if let Some(op) = &self.schur_inverse {
            op.apply(r, out);
            return;
        }
        let mut t = vec![0.0; r.len()];
        self.left.solve_upper_transposed(r, &mut t);
        let mut u = vec![0.0; r.len()];
        self.constraint.apply_forward(&t, &mut u);
        u.iter_mut().for_each(|v| *v *= self.q);
        self.right.solve_lower(&u, out);
    }

    /// `out = 𝓐⁻¹ r` by forward substitution.
    pub fn apply_constraint_inverse(&self, r: &[f64], out: &mut [f64]) {
        self.forward.solve_lower(r, out);
    }
}

impl LinearOperator for P2 {
    fn dim(&self) -> usize {
        self.layout.total()
    }

    fn apply(&self, w: &[f64], out: &mut [f64]) {
        let n = self.layout.n;
        let (w1, w2, w3) = self.layout.split(w);
        let (v1, v2, v3) = self.layout.split_mut(out);
        apply_hm_inverse(&self.mass, self.beta_tau, w2, v2);
        let mut r = vec![0.0; w3.len()];
        self.jacobian.apply(v2, &mut r);
        for (ri, wi) in r.iter_mut().zip(w3) {
            *ri = wi / self.q - *ri;
        }
        self.apply_constraint_inverse(&r, v1);
        let t: Vec<f64> = v1
            .iter()
            .zip(w1)
            .enumerate()
            .map(|(i, (v, w))| self.hy[i / n] * v - w)
            .collect();
        self.apply_schur_inverse(&t, v3);
    }
}
