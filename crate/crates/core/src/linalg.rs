//! Small linear-algebra layer shared by the solvers: the matrix-free
//! [`LinearOperator`] trait, vector kernels, a CSR matrix assembled from
//! triplets, and sparse/dense direct factorisations.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("sparse LU factorisation failed: {0}")]
    SparseLu(String),
    #[error("dense matrix is singular")]
    Singular,
    #[error("dense Cholesky factorisation failed (matrix not positive definite)")]
    NotPositiveDefinite,
}

/// A linear map applied without materialising its matrix.
///
/// Preconditioners implement the same trait: for them `apply` evaluates the
/// approximate inverse.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// `out = Op * x`. `out` is fully overwritten.
    fn apply(&self, x: &[f64], out: &mut [f64]);

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply(x, &mut out);
        out
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        (**self).apply(x, out)
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        (**self).apply(x, out)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityOperator(pub usize);

impl LinearOperator for IdentityOperator {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
}

/// Dense matrix wrapped as an operator.
#[derive(Debug, Clone)]
pub struct DenseOperator(pub DMatrix<f64>);

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let m = &self.0;
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..m.ncols()).map(|j| m[(i, j)] * x[j]).sum();
        }
    }
}

/// Materialise an operator column by column. Only meant for small problems.
pub fn to_dense(op: &dyn LinearOperator) -> DMatrix<f64> {
    let n = op.dim();
    let mut out = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        for i in 0..n {
            out[(i, j)] = col[i];
        }
        e[j] = 0.0;
    }
    out
}

/// Materialise a possibly rectangular map given as a closure.
pub fn dense_from_fn(nrows: usize, ncols: usize, f: impl Fn(&[f64], &mut [f64])) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(nrows, ncols);
    let mut e = vec![0.0; ncols];
    let mut col = vec![0.0; nrows];
    for j in 0..ncols {
        e[j] = 1.0;
        f(&e, &mut col);
        out.set_column(j, &nalgebra::DVector::from_column_slice(&col));
        e[j] = 0.0;
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Accumulates `(row, col, value)` entries; duplicates are summed.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, val));
    }

    pub fn build(mut self) -> SparseMatrix {
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.nrows {
            indptr[r + 1] += indptr[r];
        }
        SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            values,
        }
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn matvec_transpose(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                out[c] += v * x[r];
            }
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|r| self.row(r).find(|&(c, _)| c == r).map_or(0.0, |(_, v)| v))
            .collect()
    }

    /// Squared Euclidean norm of every row, i.e. `diag(A Aᵀ)`.
    pub fn row_norms_sq(&self) -> Vec<f64> {
        (0..self.nrows)
            .map(|r| self.row(r).map(|(_, v)| v * v).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                out[(r, c)] += v;
            }
        }
        out
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    /// `alpha * self + beta * other`
    pub fn lin_comb(&self, alpha: f64, beta: f64, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut b = TripletBuilder::new(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            b.push(r, c, alpha * v);
        }
        for (r, c, v) in other.triplets() {
            b.push(r, c, beta * v);
        }
        b.build()
    }

    /// `self + diag(d)`
    pub fn add_diagonal(&self, d: &[f64]) -> SparseMatrix {
        self.lin_comb(1.0, 1.0, &SparseMatrix::from_diagonal(d))
    }

    pub fn scaled(&self, alpha: f64) -> SparseMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut b = TripletBuilder::new(self.ncols, self.nrows);
        for (r, c, v) in self.triplets() {
            b.push(c, r, v);
        }
        b.build()
    }

    /// `A diag(w) Aᵀ` for this matrix `A`.
    pub fn weighted_gram(&self, w: &[f64]) -> SparseMatrix {
        assert_eq!(w.len(), self.ncols);
        let at = self.transpose();
        let mut b = TripletBuilder::new(self.nrows, self.nrows);
        for r in 0..self.nrows {
            for (k, a_rk) in self.row(r) {
                let s = a_rk * w[k];
                if s == 0.0 {
                    continue;
                }
                for (c, a_ck) in at.row(k) {
                    b.push(r, c, s * a_ck);
                }
            }
        }
        b.build()
    }

    pub fn factorize(&self) -> Result<SparseLu, LinalgError> {
        assert_eq!(self.nrows, self.ncols, "LU of a non-square matrix");
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                triplets.push(Triplet::new(r, c, v));
            }
        }
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(self.nrows, self.ncols, &triplets)
            .map_err(|e| LinalgError::SparseLu(format!("{e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| LinalgError::SparseLu(format!("{e:?}")))?;
        let factor = SparseLu {
            n: self.nrows,
            lu,
        };
        // faer reports structural failures only; catch numerically singular pivots here.
        let probe: Vec<f64> = (0..self.nrows).map(|i| 1.0 + (i % 7) as f64).collect();
        let mut x = probe.clone();
        factor.solve_in_place(&mut x);
        if !all_finite(&x) {
            return Err(LinalgError::SparseLu("numerically singular".into()));
        }
        Ok(factor)
    }
}

/// Sparse LU factor with partial pivoting.
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("n", &self.n).finish()
    }
}

impl SparseLu {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.n;
        self.lu
            .solve_in_place(faer::MatMut::from_column_major_slice_mut(rhs, n, 1));
    }

    pub fn solve_transpose_in_place(&self, rhs: &mut [f64]) {
        let n = self.n;
        self.lu
            .solve_transpose_in_place(faer::MatMut::from_column_major_slice_mut(rhs, n, 1));
    }
}

/// Dense LU factor (nalgebra) used for the small RBF blocks.
#[derive(Debug, Clone)]
pub struct DenseLu {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
}

impl DenseLu {
    pub fn new(m: DMatrix<f64>) -> Result<Self, LinalgError> {
        let n = m.nrows();
        let lu = m.lu();
        if !lu.is_invertible() {
            return Err(LinalgError::Singular);
        }
        Ok(Self { lu, n })
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let mut b = nalgebra::DVector::from_column_slice(rhs);
        self.lu.solve_mut(&mut b);
        rhs.copy_from_slice(b.as_slice());
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

/// Dense Cholesky factor.
#[derive(Debug, Clone)]
pub struct DenseCholesky {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl DenseCholesky {
    pub fn new(m: DMatrix<f64>) -> Result<Self, LinalgError> {
        m.cholesky()
            .map(|chol| Self { chol })
            .ok_or(LinalgError::NotPositiveDefinite)
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let mut b = nalgebra::DVector::from_column_slice(rhs);
        self.chol.solve_mut(&mut b);
        rhs.copy_from_slice(b.as_slice());
    }
}
