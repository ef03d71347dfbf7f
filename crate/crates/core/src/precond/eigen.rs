//! Dense Schur complement and its matching approximation, for spectral
//! checks on small problems.

use nalgebra::DMatrix;

use super::p1::full_matching_factor;
use super::{PrecondError, DENSE_LIMIT};
use crate::kkt::SaddleSystem;
use crate::linalg::dense_from_fn;

pub(crate) fn dense_constraint(sys: &SaddleSystem) -> DMatrix<f64> {
    let d = sys.layout.p_len();
    dense_from_fn(d, d, |x, o| sys.constraint.apply_forward(x, o))
}

/// Per-step `X_k = q² J_k W⁻¹ J_kᵀ`, dense.
pub(crate) fn jacobian_gram_blocks(sys: &SaddleSystem) -> Result<Vec<DMatrix<f64>>, PrecondError> {
    let g = sys.grid;
    let n = g.n();
    let w = sys.mass.matrix().to_dense();
    let winv = w
        .try_inverse()
        .ok_or_else(|| PrecondError::Singular("control weight".into()))?;
    let mut winv2 = DMatrix::zeros(2 * n, 2 * n);
    winv2.view_mut((0, 0), (n, n)).copy_from(&winv);
    winv2.view_mut((n, n), (n, n)).copy_from(&winv);
    Ok((1..=g.n_t)
        .map(|k| {
            let j = sys.jacobian.step_matrix(k).to_dense();
            (&j * &winv2 * j.transpose()) * (sys.q * sys.q)
        })
        .collect())
}

/// Symmetric positive semidefinite square root; tiny negative eigenvalues
/// from roundoff are clamped to zero.
pub(crate) fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let e = sym.symmetric_eigen();
    let d = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
}

/// Dense `S = q²𝓐M̂⁻¹𝓐ᵀ + (βτ)⁻¹X` and `Ŝ1 = F Fᵀ`, `F = (q𝓐 + M1)M̂^{-1/2}`.
pub struct DenseSchurPair {
    pub s: DMatrix<f64>,
    pub s_hat: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub mu: f64,
}

pub fn matching_schur_dense(sys: &SaddleSystem, mu_floor: f64) -> Result<DenseSchurPair, PrecondError> {
    let g = sys.grid;
    let n = g.n();
    let dim = sys.layout.p_len();
    if dim > DENSE_LIMIT {
        return Err(PrecondError::TooLargeForDense { dim, limit: DENSE_LIMIT });
    }
    let (mut f, mu, mhat) = full_matching_factor(sys, mu_floor)?;
    let a = dense_constraint(sys) * sys.q;
    let beta_tau = sys.params.beta * g.tau;
    let mut a_scaled = a.clone();
    for k in 0..g.n_t {
        let c = 1.0 / mhat[k].sqrt();
        f.columns_mut(k * n, n).scale_mut(c);
        a_scaled.columns_mut(k * n, n).scale_mut(c);
    }
    let mut s = &a_scaled * a_scaled.transpose();
    for (k, xk) in jacobian_gram_blocks(sys)?.iter().enumerate() {
        let mut view = s.view_mut((k * n, k * n), (n, n));
        view += xk / beta_tau;
    }
    let s_hat = &f * f.transpose();
    Ok(DenseSchurPair { s, s_hat, f, mu })
}

/// Extreme generalised eigenvalues of `(S, Ŝ1)` with the full matching.
pub fn schur_eigen_bounds(sys: &SaddleSystem, mu_floor: f64) -> Result<(f64, f64), PrecondError> {
    let pair = matching_schur_dense(sys, mu_floor)?;
    let finv = pair
        .f
        .clone()
        .try_inverse()
        .ok_or_else(|| PrecondError::Singular("matching factor".into()))?;
    let c = &finv * &pair.s * finv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let ev = c.symmetric_eigen().eigenvalues;
    Ok((ev.min(), ev.max()))
}
