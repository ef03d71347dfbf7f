//! Exact block-diagonal and block-triangular preconditioners built from the
//! dense saddle-point matrix. Reference implementations for tiny problems.

use nalgebra::DMatrix;

use super::{PrecondError, DENSE_LIMIT};
use crate::kkt::SaddleSystem;
use crate::linalg::{to_dense, DenseOperator};

struct Blocks {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    s: DMatrix<f64>,
}

fn blocks(sys: &SaddleSystem) -> Result<Blocks, PrecondError> {
    let dim = sys.layout.total();
    if dim > DENSE_LIMIT {
        return Err(PrecondError::TooLargeForDense { dim, limit: DENSE_LIMIT });
    }
    let k = to_dense(sys);
    let na = sys.layout.p_offset();
    let np = sys.layout.p_len();
    let a = k.view((0, 0), (na, na)).into_owned();
    let b = k.view((na, 0), (np, na)).into_owned();
    let ainv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| PrecondError::Singular("(1,1) block".into()))?;
    let s = &b * ainv * b.transpose();
    Ok(Blocks { a, b, s })
}

fn invert(m: DMatrix<f64>, what: &str) -> Result<DenseOperator, PrecondError> {
    m.try_inverse()
        .map(DenseOperator)
        .ok_or_else(|| PrecondError::Singular(what.into()))
}

/// `blkdiag(A, S)⁻¹` with `S = B A⁻¹ Bᵀ`.
pub fn ideal_block_diagonal(sys: &SaddleSystem) -> Result<DenseOperator, PrecondError> {
    let Blocks { a, s, .. } = blocks(sys)?;
    let (na, np) = (a.nrows(), s.nrows());
    let mut p = DMatrix::zeros(na + np, na + np);
    p.view_mut((0, 0), (na, na)).copy_from(&a);
    p.view_mut((na, na), (np, np)).copy_from(&s);
    invert(p, "block-diagonal preconditioner")
}

/// `[[A, 0], [B, -S]]⁻¹`.
pub fn ideal_block_triangular(sys: &SaddleSystem) -> Result<DenseOperator, PrecondError> {
    let Blocks { a, b, s } = blocks(sys)?;
    let (na, np) = (a.nrows(), s.nrows());
    let mut p = DMatrix::zeros(na + np, na + np);
    p.view_mut((0, 0), (na, na)).copy_from(&a);
    p.view_mut((na, 0), (np, na)).copy_from(&b);
    p.view_mut((na, na), (np, np)).copy_from(&(-s));
    invert(p, "block-triangular preconditioner")
}
