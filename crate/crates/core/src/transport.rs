//! Implicit Lax-Friedrichs transport operators and their linearisations.
//!
//! Per time-step the continuity form uses `K y = D1(m1 y) + D2(m2 y)` and the
//! advection form `K~ y = m1 D1 y + m2 D2 y`. With `s = tau/h` the step
//! operator is `L = I + s K` and the all-at-once constraint is the block lower
//! bidiagonal system with diagonal blocks `L(m^k)` and subdiagonal `-Dt`.
//!
//! Stacked vectors follow [`crate::state::Layout`]: a y-like sequence has
//! `N_t` blocks of `n`, a velocity sequence `N_t` blocks of `[m1; m2]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::GridSpec;
use crate::linalg::{LinearOperator, SparseLu, SparseMatrix, TripletBuilder};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("step system at time index {k} could not be factorised: {reason}")]
    SingularStepSystem { k: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransportForm {
    /// `y_t + div(m y) = 0`
    Continuity,
    /// `y_t + m . grad y = 0`
    Advection,
}

/// Velocity components at one time-step.
#[derive(Debug, Clone, Copy)]
pub struct VelocityStep<'a> {
    pub m1: &'a [f64],
    pub m2: &'a [f64],
}

impl<'a> VelocityStep<'a> {
    /// Step `k` (1-based) of a stacked velocity sequence.
    pub fn of(grid: &GridSpec, m: &'a [f64], k: usize) -> Self {
        let n = grid.n();
        let base = (k - 1) * 2 * n;
        Self {
            m1: &m[base..base + n],
            m2: &m[base + n..base + 2 * n],
        }
    }
}

fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// `out = D1(m1 y) + D2(m2 y)` (unscaled).
pub fn apply_k(grid: &GridSpec, v: VelocityStep, y: &[f64], out: &mut [f64]) {
    let mut t = vec![0.0; grid.n()];
    grid.d1(&hadamard(v.m1, y), out);
    grid.d2(&hadamard(v.m2, y), &mut t);
    crate::linalg::axpy(1.0, &t, out);
}

/// `out = Kᵀ p = -(m1 D1 p + m2 D2 p)`.
pub fn apply_k_transpose(grid: &GridSpec, v: VelocityStep, p: &[f64], out: &mut [f64]) {
    let n = grid.n();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    grid.d1(p, &mut a);
    grid.d2(p, &mut b);
    for i in 0..n {
        out[i] = -(v.m1[i] * a[i] + v.m2[i] * b[i]);
    }
}

/// `out = m1 D1 y + m2 D2 y` (unscaled).
pub fn apply_k_tilde(grid: &GridSpec, v: VelocityStep, y: &[f64], out: &mut [f64]) {
    let n = grid.n();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    grid.d1(y, &mut a);
    grid.d2(y, &mut b);
    for i in 0..n {
        out[i] = v.m1[i] * a[i] + v.m2[i] * b[i];
    }
}

/// `out = K~ᵀ p = -(D1(m1 p) + D2(m2 p))`.
pub fn apply_k_tilde_transpose(grid: &GridSpec, v: VelocityStep, p: &[f64], out: &mut [f64]) {
    apply_k(grid, v, p, out);
    out.iter_mut().for_each(|x| *x = -*x);
}

fn apply_form(grid: &GridSpec, form: TransportForm, v: VelocityStep, y: &[f64], out: &mut [f64], transpose: bool) {
    match (form, transpose) {
        (TransportForm::Continuity, false) => apply_k(grid, v, y, out),
        (TransportForm::Continuity, true) => apply_k_transpose(grid, v, y, out),
        (TransportForm::Advection, false) => apply_k_tilde(grid, v, y, out),
        (TransportForm::Advection, true) => apply_k_tilde_transpose(grid, v, y, out),
    }
}

/// `out = L y = y + (tau/h) K y`, or with the advection form `K~`.
pub fn apply_l(grid: &GridSpec, form: TransportForm, v: VelocityStep, y: &[f64], out: &mut [f64]) {
    apply_form(grid, form, v, y, out, false);
    let s = grid.transport_scale();
    for (o, yi) in out.iter_mut().zip(y) {
        *o = yi + s * *o;
    }
}

pub fn apply_l_transpose(grid: &GridSpec, form: TransportForm, v: VelocityStep, p: &[f64], out: &mut [f64]) {
    apply_form(grid, form, v, p, out, true);
    let s = grid.transport_scale();
    for (o, pi) in out.iter_mut().zip(p) {
        *o = pi + s * *o;
    }
}

/// Sparse `K` (or `K~`) for one step.
pub fn k_matrix(grid: &GridSpec, form: TransportForm, v: VelocityStep) -> SparseMatrix {
    let mut b = TripletBuilder::new(grid.n(), grid.n());
    for j in 0..grid.n_y {
        for i in 0..grid.n_x {
            let r = grid.idx(i, j);
            let [ip, im, jp, jm] = grid.neighbours(i, j);
            match form {
                TransportForm::Continuity => {
                    b.push(r, ip, 0.5 * v.m1[ip]);
                    b.push(r, im, -0.5 * v.m1[im]);
                    b.push(r, jp, 0.5 * v.m2[jp]);
                    b.push(r, jm, -0.5 * v.m2[jm]);
                }
                TransportForm::Advection => {
                    b.push(r, ip, 0.5 * v.m1[r]);
                    b.push(r, im, -0.5 * v.m1[r]);
                    b.push(r, jp, 0.5 * v.m2[r]);
                    b.push(r, jm, -0.5 * v.m2[r]);
                }
            }
        }
    }
    b.build()
}

/// Sparse `L = I + (tau/h) K` for one step.
pub fn l_matrix(grid: &GridSpec, form: TransportForm, v: VelocityStep) -> SparseMatrix {
    SparseMatrix::identity(grid.n()).lin_comb(1.0, grid.transport_scale(), &k_matrix(grid, form, v))
}

/// Factorise every `L(m^k)`, `k = 1..N_t`.
pub fn factorize_steps(grid: &GridSpec, form: TransportForm, m: &[f64]) -> Result<Vec<SparseLu>, TransportError> {
    (1..=grid.n_t)
        .map(|k| {
            l_matrix(grid, form, VelocityStep::of(grid, m, k))
                .factorize()
                .map_err(|e| TransportError::SingularStepSystem {
                    k,
                    reason: e.to_string(),
                })
        })
        .collect()
}

/// Time-step `L(m^k) y^k = Dt y^{k-1}` from `y0`; returns `y^1..y^{N_t}` stacked.
pub fn forward_solve(grid: &GridSpec, form: TransportForm, m: &[f64], y0: &[f64]) -> Result<Vec<f64>, TransportError> {
    let n = grid.n();
    let mut y = vec![0.0; n * grid.n_t];
    let mut prev = y0.to_vec();
    let mut rhs = vec![0.0; n];
    let mut check = vec![0.0; n];
    for k in 1..=grid.n_t {
        let v = VelocityStep::of(grid, m, k);
        let lu = l_matrix(grid, form, v)
            .factorize()
            .map_err(|e| TransportError::SingularStepSystem {
                k,
                reason: e.to_string(),
            })?;
        grid.dt(&prev, &mut rhs);
        let mut x = rhs.clone();
        lu.solve_in_place(&mut x);
        // one step of iterative refinement keeps the step residual near roundoff
        apply_l(grid, form, v, &x, &mut check);
        let mut r: Vec<f64> = rhs.iter().zip(&check).map(|(a, b)| a - b).collect();
        lu.solve_in_place(&mut r);
        crate::linalg::axpy(1.0, &r, &mut x);
        if !crate::linalg::all_finite(&x) {
            return Err(TransportError::SingularStepSystem {
                k,
                reason: "non-finite solution".into(),
            });
        }
        y[(k - 1) * n..k * n].copy_from_slice(&x);
        prev = x;
    }
    Ok(y)
}

/// The constraint matrix `𝓐(m)` (or `𝓐~(m)`) and, with `transpose`, its adjoint.
#[derive(Debug, Clone)]
pub struct BlockBidiagonalOperator {
    pub grid: GridSpec,
    pub form: TransportForm,
    pub m: Vec<f64>,
    pub transpose: bool,
}

impl BlockBidiagonalOperator {
    pub fn new(grid: GridSpec, form: TransportForm, m: &[f64]) -> Self {
        Self {
            grid,
            form,
            m: m.to_vec(),
            transpose: false,
        }
    }

    pub fn transposed(&self) -> Self {
        Self {
            transpose: !self.transpose,
            ..self.clone()
        }
    }

    /// `out = 𝓐 y`: block k is `L_k y_k - Dt y_{k-1}` (no `y0` term).
    pub fn apply_forward(&self, y: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let n = g.n();
        for k in 1..=g.n_t {
            let blk = (k - 1) * n..k * n;
            apply_l(g, self.form, VelocityStep::of(g, &self.m, k), &y[blk.clone()], &mut out[blk.clone()]);
            if k > 1 {
                g.dt_add(-1.0, &y[(k - 2) * n..(k - 1) * n], &mut out[blk]);
            }
        }
    }

    /// `out = 𝓐ᵀ p`: block k is `L_kᵀ p_k - Dt p_{k+1}`.
    pub fn apply_adjoint(&self, p: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let n = g.n();
        for k in 1..=g.n_t {
            let blk = (k - 1) * n..k * n;
            apply_l_transpose(g, self.form, VelocityStep::of(g, &self.m, k), &p[blk.clone()], &mut out[blk.clone()]);
            if k < g.n_t {
                g.dt_add(-1.0, &p[k * n..(k + 1) * n], &mut out[blk]);
            }
        }
    }

    /// Sparse diagonal blocks `L(m^k)`.
    pub fn diagonal_blocks(&self) -> Vec<SparseMatrix> {
        (1..=self.grid.n_t)
            .map(|k| l_matrix(&self.grid, self.form, VelocityStep::of(&self.grid, &self.m, k)))
            .collect()
    }

    /// `diag(𝓐𝓐ᵀ)`, i.e. squared row norms of the block matrix.
    pub fn row_norms_sq(&self) -> Vec<f64> {
        let n = self.grid.n();
        let dt_row = 4.0 * 0.25 * 0.25;
        let mut out = Vec::with_capacity(n * self.grid.n_t);
        for (k, l) in self.diagonal_blocks().iter().enumerate() {
            let extra = if k > 0 { dt_row } else { 0.0 };
            out.extend(l.row_norms_sq().into_iter().map(|v| v + extra));
        }
        out
    }
}

impl LinearOperator for BlockBidiagonalOperator {
    fn dim(&self) -> usize {
        self.grid.n() * self.grid.n_t
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        if self.transpose {
            self.apply_adjoint(x, out)
        } else {
            self.apply_forward(x, out)
        }
    }
}

/// Right-hand side `d = [Dt y0; 0; ...; 0]` of the constraint.
pub fn constraint_rhs(grid: &GridSpec, y0: &[f64]) -> Vec<f64> {
    let n = grid.n();
    let mut d = vec![0.0; n * grid.n_t];
    grid.dt(y0, &mut d[..n]);
    d
}

/// The discretised adjoint operator `𝓑(m)`, coded directly from its
/// definition: block k is `p_k - s (m1 D1 p_k + m2 D2 p_k) - Dt p_{k+1}`.
pub fn apply_b(grid: &GridSpec, m: &[f64], sp: &[f64], out: &mut [f64]) {
    let n = grid.n();
    let s = grid.transport_scale();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for k in 1..=grid.n_t {
        let v = VelocityStep::of(grid, m, k);
        let pk = &sp[(k - 1) * n..k * n];
        grid.d1(pk, &mut a);
        grid.d2(pk, &mut b);
        let o = &mut out[(k - 1) * n..k * n];
        for i in 0..n {
            o[i] = pk[i] - s * (v.m1[i] * a[i] + v.m2[i] * b[i]);
        }
        if k < grid.n_t {
            grid.dt_add(-1.0, &sp[k * n..(k + 1) * n], o);
        }
    }
}

/// Linearisation `𝓙(y)` of `𝓐(m) y` with respect to `m`, block diagonal over
/// time-steps; maps a velocity sequence to a y-like sequence.
#[derive(Debug, Clone)]
pub struct JacobianOperator {
    pub grid: GridSpec,
    pub form: TransportForm,
    pub y: Vec<f64>,
}

impl JacobianOperator {
    pub fn new(grid: GridSpec, form: TransportForm, y: &[f64]) -> Self {
        Self { grid, form, y: y.to_vec() }
    }

    pub fn apply(&self, sm: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let n = g.n();
        let s = g.transport_scale();
        for k in 1..=g.n_t {
            let yk = &self.y[(k - 1) * n..k * n];
            let v = VelocityStep::of(g, sm, k);
            let o = &mut out[(k - 1) * n..k * n];
            match self.form {
                TransportForm::Continuity => apply_k(g, VelocityStep { m1: v.m1, m2: v.m2 }, yk, o),
                TransportForm::Advection => apply_k_tilde(g, v, yk, o),
            }
            o.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn apply_transpose(&self, sp: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let n = g.n();
        let s = g.transport_scale();
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        for k in 1..=g.n_t {
            let yk = &self.y[(k - 1) * n..k * n];
            let pk = &sp[(k - 1) * n..k * n];
            let o = &mut out[(k - 1) * 2 * n..k * 2 * n];
            match self.form {
                TransportForm::Continuity => {
                    g.d1_t(pk, &mut a);
                    g.d2_t(pk, &mut b);
                    for i in 0..n {
                        o[i] = s * yk[i] * a[i];
                        o[n + i] = s * yk[i] * b[i];
                    }
                }
                TransportForm::Advection => {
                    g.d1(yk, &mut a);
                    g.d2(yk, &mut b);
                    for i in 0..n {
                        o[i] = s * a[i] * pk[i];
                        o[n + i] = s * b[i] * pk[i];
                    }
                }
            }
        }
    }

    /// Sparse `n x 2n` block for step `k` (1-based).
    pub fn step_matrix(&self, k: usize) -> SparseMatrix {
        let g = &self.grid;
        let n = g.n();
        let s = g.transport_scale();
        let yk = &self.y[(k - 1) * n..k * n];
        let mut b = TripletBuilder::new(n, 2 * n);
        match self.form {
            TransportForm::Continuity => {
                for j in 0..g.n_y {
                    for i in 0..g.n_x {
                        let r = g.idx(i, j);
                        let [ip, im, jp, jm] = g.neighbours(i, j);
                        b.push(r, ip, 0.5 * s * yk[ip]);
                        b.push(r, im, -0.5 * s * yk[im]);
                        b.push(r, n + jp, 0.5 * s * yk[jp]);
                        b.push(r, n + jm, -0.5 * s * yk[jm]);
                    }
                }
            }
            TransportForm::Advection => {
                let mut a = vec![0.0; n];
                let mut c = vec![0.0; n];
                g.d1(yk, &mut a);
                g.d2(yk, &mut c);
                for r in 0..n {
                    b.push(r, r, s * a[r]);
                    b.push(r, n + r, s * c[r]);
                }
            }
        }
        b.build()
    }
}

/// `𝓖(p)`: maps a velocity sequence to a y-like sequence,
/// block k is `s [diag(D1ᵀ p_k)  diag(D2ᵀ p_k)]`.
#[derive(Debug, Clone)]
pub struct MultiplierCoupling {
    pub grid: GridSpec,
    d1tp: Vec<f64>,
    d2tp: Vec<f64>,
}

impl MultiplierCoupling {
    pub fn new(grid: GridSpec, p: &[f64]) -> Self {
        let n = grid.n();
        let mut d1tp = vec![0.0; p.len()];
        let mut d2tp = vec![0.0; p.len()];
        for k in 0..grid.n_t {
            let blk = k * n..(k + 1) * n;
            grid.d1_t(&p[blk.clone()], &mut d1tp[blk.clone()]);
            grid.d2_t(&p[blk.clone()], &mut d2tp[blk]);
        }
        Self { grid, d1tp, d2tp }
    }

    pub fn apply(&self, sm: &[f64], out: &mut [f64]) {
        let n = self.grid.n();
        let s = self.grid.transport_scale();
        for k in 0..self.grid.n_t {
            for i in 0..n {
                let r = k * n + i;
                out[r] = s * (self.d1tp[r] * sm[2 * k * n + i] + self.d2tp[r] * sm[2 * k * n + n + i]);
            }
        }
    }

    pub fn apply_transpose(&self, sy: &[f64], out: &mut [f64]) {
        let n = self.grid.n();
        let s = self.grid.transport_scale();
        for k in 0..self.grid.n_t {
            for i in 0..n {
                let r = k * n + i;
                out[2 * k * n + i] = s * self.d1tp[r] * sy[r];
                out[2 * k * n + n + i] = s * self.d2tp[r] * sy[r];
            }
        }
    }
}

/// `𝓖~(y)`: block k is `[diag(D1 y_k); diag(D2 y_k)]`, mapping a y-like
/// sequence to a velocity sequence. The advection Jacobian is `s 𝓖~ᵀ`.
#[derive(Debug, Clone)]
pub struct AdvectionCoupling {
    pub grid: GridSpec,
    d1y: Vec<f64>,
    d2y: Vec<f64>,
}

impl AdvectionCoupling {
    pub fn new(grid: GridSpec, y: &[f64]) -> Self {
        let n = grid.n();
        let mut d1y = vec![0.0; y.len()];
        let mut d2y = vec![0.0; y.len()];
        for k in 0..grid.n_t {
            let blk = k * n..(k + 1) * n;
            grid.d1(&y[blk.clone()], &mut d1y[blk.clone()]);
            grid.d2(&y[blk.clone()], &mut d2y[blk]);
        }
        Self { grid, d1y, d2y }
    }

    pub fn apply(&self, sy: &[f64], out: &mut [f64]) {
        let n = self.grid.n();
        for k in 0..self.grid.n_t {
            for i in 0..n {
                let r = k * n + i;
                out[2 * k * n + i] = self.d1y[r] * sy[r];
                out[2 * k * n + n + i] = self.d2y[r] * sy[r];
            }
        }
    }

    pub fn apply_transpose(&self, sm: &[f64], out: &mut [f64]) {
        let n = self.grid.n();
        for k in 0..self.grid.n_t {
            for i in 0..n {
                let r = k * n + i;
                out[r] = self.d1y[r] * sm[2 * k * n + i] + self.d2y[r] * sm[2 * k * n + n + i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dense_from_fn, dot, norm2};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};

    fn rnd(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn dense_d(g: &GridSpec, dim: usize) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(g.n(), g.n());
        for j in 0..g.n_y {
            for i in 0..g.n_x {
                let (p, m) = if dim == 1 {
                    (g.idx((i + 1) % g.n_x, j), g.idx((i + g.n_x - 1) % g.n_x, j))
                } else {
                    (g.idx(i, (j + 1) % g.n_y), g.idx(i, (j + g.n_y - 1) % g.n_y))
                };
                d[(g.idx(i, j), p)] += 0.5;
                d[(g.idx(i, j), m)] -= 0.5;
            }
        }
        d
    }

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn k_matches_dense_factorisation() {
        let g = GridSpec::new(4, 4, 1).unwrap();
        let (m1, m2, y) = (rnd(16, 1), rnd(16, 2), rnd(16, 3));
        let v = VelocityStep { m1: &m1, m2: &m2 };
        let oracle = &dense_d(&g, 1) * diag(&m1) + &dense_d(&g, 2) * diag(&m2);
        let mut out = vec![0.0; 16];
        apply_k(&g, v, &y, &mut out);
        let expected = &oracle * DVector::from_column_slice(&y);
        for i in 0..16 {
            assert!((out[i] - expected[i]).abs() < 1e-15);
        }
        assert!((k_matrix(&g, TransportForm::Continuity, v).to_dense() - &oracle).abs().max() < 1e-15);
        let tilde = diag(&m1) * dense_d(&g, 1) + diag(&m2) * dense_d(&g, 2);
        assert!((k_matrix(&g, TransportForm::Advection, v).to_dense() - &tilde).abs().max() < 1e-15);
        let kt = dense_from_fn(16, 16, |x, o| apply_k_transpose(&g, v, x, o));
        assert!((kt - oracle.transpose()).abs().max() < 1e-15);
    }

    #[test]
    fn zero_velocity_and_constants() {
        let g = GridSpec::new(5, 4, 1).unwrap();
        let zero = vec![0.0; g.n()];
        let y = rnd(g.n(), 4);
        let mut out = vec![1.0; g.n()];
        apply_k(&g, VelocityStep { m1: &zero, m2: &zero }, &y, &mut out);
        assert!(out.iter().all(|&v| v == 0.0));
        apply_l(&g, TransportForm::Continuity, VelocityStep { m1: &zero, m2: &zero }, &y, &mut out);
        assert_eq!(out, y);
        let c = vec![0.7; g.n()];
        apply_k(&g, VelocityStep { m1: &c, m2: &c }, &c, &mut out);
        assert!(out.iter().all(|&v| v.abs() < 1e-16));
        let m = rnd(g.n(), 5);
        apply_k_tilde(&g, VelocityStep { m1: &m, m2: &m }, &c, &mut out);
        assert!(out.iter().all(|&v| v.abs() < 1e-16));
    }

    #[test]
    fn l_preserves_column_sums() {
        let g = GridSpec::new(6, 5, 3).unwrap();
        for seed in 0..5 {
            let (m1, m2, y) = (rnd(g.n(), seed), rnd(g.n(), seed + 10), rnd(g.n(), seed + 20));
            let mut out = vec![0.0; g.n()];
            apply_l(&g, TransportForm::Continuity, VelocityStep { m1: &m1, m2: &m2 }, &y, &mut out);
            let (a, b): (f64, f64) = (out.iter().sum(), y.iter().sum());
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn forward_solve_trivial_cases() {
        let g = GridSpec::new(4, 4, 3).unwrap();
        let m = vec![0.0; 2 * g.n() * g.n_t];
        let y = forward_solve(&g, TransportForm::Continuity, &m, &vec![1.0; 16]).unwrap();
        assert!(y.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let mut e = vec![0.0; 16];
        e[g.idx(2, 1)] = 1.0;
        let y = forward_solve(&g, TransportForm::Continuity, &m, &e).unwrap();
        let mut expected = vec![0.0; 16];
        g.dt(&e, &mut expected);
        for i in 0..16 {
            assert!((y[i] - expected[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_solve_satisfies_constraint() {
        let g = GridSpec::new(6, 6, 3).unwrap();
        let m = rnd(2 * g.n() * g.n_t, 9);
        let y0: Vec<f64> = rnd(g.n(), 10).iter().map(|v| v.abs()).collect();
        for form in [TransportForm::Continuity, TransportForm::Advection] {
            let y = forward_solve(&g, form, &m, &y0).unwrap();
            let a = BlockBidiagonalOperator::new(g, form, &m);
            let mut r = vec![0.0; y.len()];
            a.apply_forward(&y, &mut r);
            let d = constraint_rhs(&g, &y0);
            let res: Vec<f64> = r.iter().zip(&d).map(|(a, b)| a - b).collect();
            assert!(norm2(&res) < 1e-13 * norm2(&d));
        }
    }

    #[test]
    fn b_is_a_transpose() {
        let g = GridSpec::new(5, 4, 3).unwrap();
        let m = rnd(2 * g.n() * g.n_t, 21);
        let x = rnd(g.n() * g.n_t, 22);
        let a = BlockBidiagonalOperator::new(g, TransportForm::Continuity, &m);
        let mut u = vec![0.0; x.len()];
        let mut v = vec![0.0; x.len()];
        a.apply_adjoint(&x, &mut u);
        apply_b(&g, &m, &x, &mut v);
        for i in 0..x.len() {
            assert!((u[i] - v[i]).abs() <= 1e-14 * (1.0 + u[i].abs()));
        }
        let ax = a.apply_vec(&x);
        assert!((dot(&ax, &x) - dot(&x, &u)).abs() < 1e-12);
    }

    #[test]
    fn block_operator_single_step_is_l() {
        let g = GridSpec::new(4, 4, 1).unwrap();
        let m = rnd(2 * g.n(), 31);
        let y = rnd(g.n(), 32);
        let a = BlockBidiagonalOperator::new(g, TransportForm::Continuity, &m);
        let mut l = vec![0.0; g.n()];
        apply_l(&g, TransportForm::Continuity, VelocityStep::of(&g, &m, 1), &y, &mut l);
        assert_eq!(a.apply_vec(&y), l);
    }

    #[test]
    fn row_norms_match_dense() {
        let g = GridSpec::new(4, 3, 2).unwrap();
        let m = rnd(2 * g.n() * g.n_t, 41);
        let a = BlockBidiagonalOperator::new(g, TransportForm::Continuity, &m);
        let d = dense_from_fn(a.dim(), a.dim(), |x, o| a.apply_forward(x, o));
        let expected = (&d * d.transpose()).diagonal();
        for (i, v) in a.row_norms_sq().iter().enumerate() {
            assert!((v - expected[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn jacobian_step_matrix_matches_apply() {
        let g = GridSpec::new(4, 5, 2).unwrap();
        let y = rnd(g.n() * 2, 51);
        for form in [TransportForm::Continuity, TransportForm::Advection] {
            let j = JacobianOperator::new(g, form, &y);
            let full = dense_from_fn(g.n() * 2, 4 * g.n(), |x, o| j.apply(x, o));
            for k in 1..=2 {
                let blk = full.view(((k - 1) * g.n(), (k - 1) * 2 * g.n()), (g.n(), 2 * g.n()));
                assert!((j.step_matrix(k).to_dense() - blk).abs().max() < 1e-15);
            }
        }
    }
}
