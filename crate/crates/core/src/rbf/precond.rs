//! Block-diagonal preconditioner `blkdiag(Â_y, A_m11, A_m22, Ŝ)` with
//! `Ŝ = (C_y + 𝓜1) Â_y⁻¹ (B_yᵀ + 𝓜2)` applied by block substitution.

use nalgebra::DMatrix;

use super::system::{gemv, RbfCoefficients, RbfSystem};
use super::RbfError;
use crate::linalg::{DenseLu, LinearOperator};

pub struct P1Rbf {
    n: usize,
    n_t: usize,
    fingerprint: u64,
    pub mu: f64,
    /// `Â_y^{(k)} = a_hat[k] · C_s`.
    pub a_hat: Vec<f64>,
    /// Diagonal of `𝓜1 = 𝓜2`, stacked over steps.
    pub matching: Vec<f64>,
    cs: DMatrix<f64>,
    cs_lu: DenseLu,
    am_lu: DenseLu,
    lower: Vec<DenseLu>,
    upper: Vec<DenseLu>,
}

fn lu(m: DMatrix<f64>, what: &str) -> Result<DenseLu, RbfError> {
    DenseLu::new(m).map_err(|_| RbfError::IllConditioned(format!("{what} is singular")))
}

fn mean_abs(v: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x.abs(), c + 1));
    s / c.max(1) as f64
}

impl P1Rbf {
    pub fn new(sys: &RbfSystem, mu_floor: f64) -> Result<Self, RbfError> {
        let (n, nt) = (sys.n, sys.n_t);
        let cs_inv = sys
            .cs
            .clone()
            .try_inverse()
            .ok_or_else(|| RbfError::IllConditioned("collocation matrix is singular".into()))?;
        let am_inv = sys
            .am
            .clone()
            .try_inverse()
            .ok_or_else(|| RbfError::IllConditioned("control block is singular".into()))?;

        // X_k = C_m1 A_m⁻¹ B_m1ᵀ + C_m2 A_m⁻¹ B_m2ᵀ and the first Schur term
        // C_y^{(k)} C_s⁻¹ B_y^{(k)ᵀ} (+ C_s from the coupling), diagonals only.
        let mut x_diag = Vec::with_capacity(n * nt);
        let mut t1_diag = Vec::with_capacity(n * nt);
        for i in 0..nt {
            let x = &sys.cm1[i] * &am_inv * sys.bm1[i].transpose() + &sys.cm2[i] * &am_inv * sys.bm2[i].transpose();
            x_diag.extend(x.diagonal().iter());
            let mut t1 = &sys.cy[i] * &cs_inv * sys.by[i].transpose();
            if i > 0 {
                t1 += &sys.cs;
            }
            t1_diag.extend(t1.diagonal().iter());
        }
        let t1 = mean_abs(t1_diag.into_iter());
        let t2 = mean_abs(x_diag.iter().copied());
        let mu = (t2 / t1.max(mu_floor)).clamp(mu_floor, 1.0 / mu_floor);
        let a_hat: Vec<f64> = sys.ay.iter().map(|&a| if a == 0.0 { mu } else { a }).collect();

        // diag(𝓜 Â⁻¹ 𝓜) = |diag X|
        let cs_inv_diag = cs_inv.diagonal();
        let matching: Vec<f64> = x_diag
            .iter()
            .enumerate()
            .map(|(r, x)| (a_hat[r / n] * x.abs() / cs_inv_diag[r % n]).sqrt())
            .collect();

        let mut lower = Vec::with_capacity(nt);
        let mut upper = Vec::with_capacity(nt);
        for i in 0..nt {
            let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&matching[i * n..(i + 1) * n]));
            lower.push(lu(&sys.cy[i] + &d, "C_y + M1")?);
            upper.push(lu(sys.by[i].transpose() + &d, "B_yᵀ + M2")?);
        }
        Ok(Self {
            n,
            n_t: nt,
            fingerprint: sys.fingerprint,
            mu,
            a_hat,
            matching,
            cs_lu: lu(sys.cs.clone(), "C_s")?,
            cs: sys.cs.clone(),
            am_lu: lu(sys.am.clone(), "A_m")?,
            lower,
            upper,
        })
    }

    pub fn check(&self, c: &RbfCoefficients) -> Result<(), RbfError> {
        if c.fingerprint() == self.fingerprint {
            Ok(())
        } else {
            Err(RbfError::FactorizationStale)
        }
    }

    pub fn apply_checked(&self, c: &RbfCoefficients, v: &[f64]) -> Result<Vec<f64>, RbfError> {
        self.check(c)?;
        Ok(self.apply_vec(v))
    }

    /// `out = Ŝ⁻¹ r`.
    pub fn apply_schur_inverse(&self, r: &[f64], out: &mut [f64]) {
        let n = self.n;
        let mut t = r.to_vec();
        for k in 0..self.n_t {
            let (done, rest) = t.split_at_mut(k * n);
            let cur = &mut rest[..n];
            if k > 0 {
                gemv(cur, 1.0, &self.cs, &done[(k - 1) * n..], false);
            }
            self.lower[k].solve_in_place(cur);
        }
        for k in 0..self.n_t {
            let mut u = vec![0.0; n];
            gemv(&mut u, self.a_hat[k], &self.cs, &t[k * n..(k + 1) * n], false);
            out[k * n..(k + 1) * n].copy_from_slice(&u);
        }
        for k in (0..self.n_t).rev() {
            let (head, tail) = out.split_at_mut((k + 1) * n);
            let cur = &mut head[k * n..];
            if k + 1 < self.n_t {
                gemv(cur, 1.0, &self.cs, &tail[..n], false);
            }
            self.upper[k].solve_in_place(cur);
        }
    }
}

impl LinearOperator for P1Rbf {
    fn dim(&self) -> usize {
        4 * self.n * self.n_t
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        let l = n * self.n_t;
        out[..3 * l].copy_from_slice(&x[..3 * l]);
        for k in 0..self.n_t {
            let cur = &mut out[k * n..(k + 1) * n];
            self.cs_lu.solve_in_place(cur);
            cur.iter_mut().for_each(|v| *v /= self.a_hat[k]);
        }
        for chunk in out[l..3 * l].chunks_mut(n) {
            self.am_lu.solve_in_place(chunk);
        }
        let (_, op) = out.split_at_mut(3 * l);
        self.apply_schur_inverse(&x[3 * l..], op);
    }
}
