//! Block preconditioners for the Newton saddle-point systems.
//!
//! Every preconditioner is exposed through [`LinearOperator`], whose `apply`
//! evaluates the approximate inverse. Factorisations are built once per
//! Newton step and tied to the iterate they were built for.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kkt::{ControlMass, KktError, SaddleSystem};
use crate::linalg::{IdentityOperator, LinearOperator};
use crate::state::SpaceTimeState;

mod eigen;
mod ideal;
mod p1;
mod p2;

pub use eigen::{matching_schur_dense, schur_eigen_bounds, DenseSchurPair};
pub use ideal::{ideal_block_diagonal, ideal_block_triangular};
pub use p1::{P1Diagonal, P1Full};
pub use p2::P2;

/// Largest multiplier-block dimension the dense code paths accept.
pub const DENSE_LIMIT: usize = 1024;

#[derive(Debug, Error)]
pub enum PrecondError {
    #[error("preconditioner was built for a different iterate")]
    FactorizationStale,
    #[error("block at time index {k} could not be factorised: {reason}")]
    SingularStepSystem { k: usize, reason: String },
    #[error("dense block is singular: {0}")]
    Singular(String),
    #[error("dense path limited to dimension {limit}, problem has {dim}")]
    TooLargeForDense { dim: usize, limit: usize },
    #[error(transparent)]
    Kkt(#[from] KktError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrecondKind {
    P1,
    P2,
    IdealDiag,
    IdealTri,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchurVariant {
    MatchingFull,
    MatchingDiagonal,
}

/// Choice of `M_r` inside P2: exact `𝓜⁻¹` or `diag(𝓜)⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RightMatching {
    Full,
    DiagMass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecondConfig {
    pub kind: PrecondKind,
    pub schur_variant: SchurVariant,
    pub mu_floor: f64,
    #[serde(default = "default_right")]
    pub right_matching: RightMatching,
}

fn default_right() -> RightMatching {
    RightMatching::Full
}

impl Default for PrecondConfig {
    fn default() -> Self {
        Self {
            kind: PrecondKind::P2,
            schur_variant: SchurVariant::MatchingDiagonal,
            mu_floor: 1e-12,
            right_matching: RightMatching::Full,
        }
    }
}

/// A built preconditioner tied to one Newton iterate.
pub struct Preconditioner {
    pub kind: PrecondKind,
    fingerprint: u64,
    inner: Box<dyn LinearOperator + Send>,
}

impl std::fmt::Debug for Preconditioner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Preconditioner")
            .field("kind", &self.kind)
            .field("dim", &self.inner.dim())
            .finish()
    }
}

impl Preconditioner {
    pub fn build(sys: &SaddleSystem, state: &SpaceTimeState, cfg: &PrecondConfig) -> Result<Self, PrecondError> {
        let inner: Box<dyn LinearOperator + Send> = match (cfg.kind, cfg.schur_variant) {
            (PrecondKind::P1, SchurVariant::MatchingDiagonal) => Box::new(P1Diagonal::new(sys, cfg.mu_floor)?),
            (PrecondKind::P1, SchurVariant::MatchingFull) => Box::new(P1Full::new(sys, cfg.mu_floor)?),
            (PrecondKind::P2, _) => Box::new(P2::new(sys, cfg.right_matching)?),
            (PrecondKind::IdealDiag, _) => Box::new(ideal_block_diagonal(sys)?),
            (PrecondKind::IdealTri, _) => Box::new(ideal_block_triangular(sys)?),
            (PrecondKind::None, _) => Box::new(IdentityOperator(sys.dim())),
        };
        Ok(Self {
            kind: cfg.kind,
            fingerprint: state.fingerprint(),
            inner,
        })
    }

    /// Errors if `state` is not the iterate this preconditioner was built for.
    pub fn check(&self, state: &SpaceTimeState) -> Result<(), PrecondError> {
        if state.fingerprint() == self.fingerprint {
            Ok(())
        } else {
            Err(PrecondError::FactorizationStale)
        }
    }

    pub fn apply_checked(&self, state: &SpaceTimeState, v: &[f64]) -> Result<Vec<f64>, PrecondError> {
        self.check(state)?;
        Ok(self.inner.apply_vec(v))
    }
}

impl LinearOperator for Preconditioner {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.inner.apply(x, out)
    }
}

/// `diag(q² 𝓙 diag(𝓜)⁻¹ 𝓙ᵀ)`, exact when `W` is diagonal.
pub fn jacobian_gram_diag(sys: &SaddleSystem) -> Vec<f64> {
    let g = &sys.grid;
    let n = g.n();
    let wd = sys.mass.diag();
    let q2 = sys.q * sys.q;
    let mut out = Vec::with_capacity(n * g.n_t);
    for k in 1..=g.n_t {
        let jk = sys.jacobian.step_matrix(k);
        for r in 0..n {
            out.push(q2 * jk.row(r).map(|(c, v)| v * v / wd[c % n]).sum::<f64>());
        }
    }
    out
}

/// Substitute for the zero blocks of the `(y, y)` block.
///
/// `μ = mean(diag T2) / max(mean(diag T1), floor)`, clipped to
/// `[floor, 1/floor]`, with `T1 = q²𝓐𝓐ᵀ` and `T2 = (βτ)⁻¹ q² 𝓙𝓜⁻¹𝓙ᵀ`.
pub fn build_mu(sys: &SaddleSystem, mu_floor: f64) -> f64 {
    let q2 = sys.q * sys.q;
    let t1 = sys.constraint.row_norms_sq();
    let mean1 = q2 * t1.iter().sum::<f64>() / t1.len() as f64;
    let t2 = jacobian_gram_diag(sys);
    let bt = sys.params.beta * sys.grid.tau;
    let mean2 = t2.iter().sum::<f64>() / (bt * t2.len() as f64);
    (mean2 / mean1.max(mu_floor)).clamp(mu_floor, 1.0 / mu_floor)
}

/// Per-step `(1,1)` scalars used inside P1: `H_y` with zero steps replaced by `μ`.
pub fn regularised_hy(sys: &SaddleSystem, mu: f64) -> Vec<f64> {
    sys.hy.iter().map(|&v| if v == 0.0 { mu } else { v }).collect()
}

/// Factors `F_k` of a block bidiagonal matrix whose off-diagonal blocks are
/// `-c Dt`: lower form `F_k v_k - c Dt v_{k-1}`, upper form
/// `F_kᵀ v_k - c Dt v_{k+1}`.
pub(crate) struct BidiagonalFactors {
    grid: crate::grid::GridSpec,
    coupling: f64,
    lus: Vec<crate::linalg::SparseLu>,
}

impl BidiagonalFactors {
    pub(crate) fn new(
        grid: crate::grid::GridSpec,
        coupling: f64,
        blocks: impl IntoIterator<Item = crate::linalg::SparseMatrix>,
    ) -> Result<Self, PrecondError> {
        let lus = blocks
            .into_iter()
            .enumerate()
            .map(|(i, b)| {
                b.factorize().map_err(|e| PrecondError::SingularStepSystem {
                    k: i + 1,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { grid, coupling, lus })
    }

    pub(crate) fn solve_lower(&self, r: &[f64], out: &mut [f64]) {
        let n = self.grid.n();
        out.copy_from_slice(r);
        for k in 0..self.grid.n_t {
            let (done, rest) = out.split_at_mut(k * n);
            let cur = &mut rest[..n];
            if k > 0 {
                self.grid.dt_add(self.coupling, &done[(k - 1) * n..], cur);
            }
            self.lus[k].solve_in_place(cur);
        }
    }

    pub(crate) fn solve_upper_transposed(&self, r: &[f64], out: &mut [f64]) {
        let n = self.grid.n();
        let nt = self.grid.n_t;
        out.copy_from_slice(r);
        for k in (0..nt).rev() {
            let (head, tail) = out.split_at_mut((k + 1) * n);
            let cur = &mut head[k * n..];
            if k + 1 < nt {
                self.grid.dt_add(self.coupling, &tail[..n], cur);
            }
            self.lus[k].solve_transpose_in_place(cur);
        }
    }
}

/// `out = H_m⁻¹ x = (βτ𝓜)⁻¹ x`.
pub(crate) fn apply_hm_inverse(mass: &ControlMass, beta_tau: f64, x: &[f64], out: &mut [f64]) {
    out.copy_from_slice(x);
    mass.solve_in_place(out);
    out.iter_mut().for_each(|v| *v /= beta_tau);
}
