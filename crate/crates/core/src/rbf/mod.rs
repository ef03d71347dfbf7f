//! Gaussian RBF straight collocation of the continuity optimise-then-discretise
//! Newton system, with backward Euler in time.
//!
//! Every unknown field at step `k` is `Σ_j X_{j,k} φ_j`, `φ_j(x) = exp(-c‖x - ξ_j‖²)`,
//! and every equation is enforced at the centres `ξ_i`.

use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::DenseCholesky;

mod precond;
mod system;

pub use precond::P1Rbf;
pub use system::{
    assemble_rbf_system, rbf_initial_coefficients, rbf_objective, rbf_residual, rbf_terminal_misfit, RbfCoefficients,
    RbfData, RbfFields, RbfSystem,
};

/// Centres closer than this are treated as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RbfError {
    #[error("invalid centres: {0}")]
    InvalidCentres(String),
    #[error("collocation matrix is ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("data does not match the model: {0}")]
    DataMismatch(String),
    #[error("preconditioner was built for a different iterate")]
    FactorizationStale,
    #[error("could not read centres from {path}: {msg}")]
    CentreFile { path: String, msg: String },
}

/// Gaussian RBF model on `[0,1)²` with `n_t` backward Euler steps on `[0,1]`.
#[derive(Debug, Clone)]
pub struct RbfModel {
    pub centres: Vec<[f64; 2]>,
    pub shape_c: f64,
    pub n_t: usize,
    pub tau: f64,
    cs: DMatrix<f64>,
    cs_chol: DenseCholesky,
    g1: DMatrix<f64>,
    g2: DMatrix<f64>,
    neg_lap: DMatrix<f64>,
}

impl RbfModel {
    pub fn new(centres: Vec<[f64; 2]>, shape_c: f64, n_t: usize) -> Result<Self, RbfError> {
        if centres.is_empty() {
            return Err(RbfError::InvalidCentres("no centres".into()));
        }
        if let Some(p) = centres.iter().find(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(RbfError::InvalidCentres(format!("non-finite centre {p:?}")));
        }
        let d = min_pairwise_distance(&centres);
        if d <= DUPLICATE_TOL {
            return Err(RbfError::InvalidCentres(format!("duplicate centres (min distance {d:e})")));
        }
        if !(shape_c > 0.0 && shape_c.is_finite()) {
            return Err(RbfError::InvalidParams(format!("shape parameter must be positive, got {shape_c}")));
        }
        if n_t == 0 {
            return Err(RbfError::InvalidParams("n_t must be at least 1".into()));
        }
        let mut model = Self {
            cs: DMatrix::zeros(0, 0),
            g1: DMatrix::zeros(0, 0),
            g2: DMatrix::zeros(0, 0),
            neg_lap: DMatrix::zeros(0, 0),
            cs_chol: DenseCholesky::new(DMatrix::identity(1, 1)).expect("1x1 identity"),
            centres,
            shape_c,
            n_t,
            tau: 1.0 / n_t as f64,
        };
        let cs = model.eval_basis(&model.centres);
        model.cs_chol = DenseCholesky::new(cs.clone()).map_err(|_| {
            RbfError::IllConditioned(format!("Cholesky of the collocation matrix failed for c = {shape_c}"))
        })?;
        model.cs = cs;
        let (g1, g2) = model.eval_grad_basis(&model.centres);
        model.neg_lap = -model.eval_laplacian_basis(&model.centres);
        model.g1 = g1;
        model.g2 = g2;
        Ok(model)
    }

    /// Uses [`default_shape`].
    pub fn with_default_shape(centres: Vec<[f64; 2]>, n_t: usize) -> Result<Self, RbfError> {
        let c = default_shape(&centres)?;
        Self::new(centres, c, n_t)
    }

    pub fn n(&self) -> usize {
        self.centres.len()
    }

    /// `C_s`, the basis evaluated at the centres.
    pub fn collocation(&self) -> &DMatrix<f64> {
        &self.cs
    }

    pub fn phi(&self, x: [f64; 2], j: usize) -> f64 {
        let r2 = dist2(x, self.centres[j]);
        (-self.shape_c * r2).exp()
    }

    /// Basis gradients at the centres.
    pub fn grad_at_centres(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.g1, &self.g2)
    }

    /// `-Δφ_j(ξ_i)`.
    pub fn neg_laplacian_at_centres(&self) -> &DMatrix<f64> {
        &self.neg_lap
    }

    /// `(i, j) = φ_j(x_i)`.
    pub fn eval_basis(&self, points: &[[f64; 2]]) -> DMatrix<f64> {
        DMatrix::from_fn(points.len(), self.n(), |i, j| self.phi(points[i], j))
    }

    /// `(∂φ_j/∂x₁ (x_i), ∂φ_j/∂x₂ (x_i))`.
    pub fn eval_grad_basis(&self, points: &[[f64; 2]]) -> (DMatrix<f64>, DMatrix<f64>) {
        let c = self.shape_c;
        let g = |a: usize| {
            DMatrix::from_fn(points.len(), self.n(), |i, j| {
                -2.0 * c * (points[i][a] - self.centres[j][a]) * self.phi(points[i], j)
            })
        };
        (g(0), g(1))
    }

    /// `Δφ_j(x_i) = (4c²r² - 4c) φ_j(x_i)`.
    pub fn eval_laplacian_basis(&self, points: &[[f64; 2]]) -> DMatrix<f64> {
        let c = self.shape_c;
        DMatrix::from_fn(points.len(), self.n(), |i, j| {
            let r2 = dist2(points[i], self.centres[j]);
            (4.0 * c * c * r2 - 4.0 * c) * (-c * r2).exp()
        })
    }

    /// Coefficients `α` with `C_s α = samples`.
    pub fn interpolate(&self, samples: &[f64]) -> Result<Vec<f64>, RbfError> {
        if samples.len() != self.n() {
            return Err(RbfError::DataMismatch(format!(
                "{} samples for {} centres",
                samples.len(),
                self.n()
            )));
        }
        let mut a = samples.to_vec();
        self.cs_chol.solve_in_place(&mut a);
        // one step of refinement
        let r = nalgebra::DVector::from_column_slice(samples) - &self.cs * nalgebra::DVector::from_column_slice(&a);
        let mut d = r.as_slice().to_vec();
        self.cs_chol.solve_in_place(&mut d);
        a.iter_mut().zip(&d).for_each(|(x, y)| *x += y);
        if a.iter().any(|v| !v.is_finite()) {
            return Err(RbfError::IllConditioned("non-finite interpolation coefficients".into()));
        }
        Ok(a)
    }

    /// Values of `Σ_j α_j φ_j` at `points`.
    pub fn evaluate(&self, coeffs: &[f64], points: &[[f64; 2]]) -> Vec<f64> {
        points
            .iter()
            .map(|&x| coeffs.iter().enumerate().map(|(j, a)| a * self.phi(x, j)).sum())
            .collect()
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest_neighbour_distances(centres: &[[f64; 2]]) -> Vec<f64> {
    centres
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            centres
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &b)| dist2(a, b))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

fn min_pairwise_distance(centres: &[[f64; 2]]) -> f64 {
    nearest_neighbour_distances(centres)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// `c = 1/(2 d̄²)`, `d̄` the mean nearest-neighbour distance.
pub fn default_shape(centres: &[[f64; 2]]) -> Result<f64, RbfError> {
    if centres.len() < 2 {
        return Err(RbfError::InvalidCentres("need at least two centres for the default shape".into()));
    }
    let d = nearest_neighbour_distances(centres);
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    if mean <= DUPLICATE_TOL {
        return Err(RbfError::InvalidCentres("centres coincide".into()));
    }
    Ok(1.0 / (2.0 * mean * mean))
}

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// First `n` points of the base (2, 3) Halton sequence, skipping the origin.
pub fn halton_centres(n: usize) -> Vec<[f64; 2]> {
    (1..=n).map(|i| [radical_inverse(i, 2), radical_inverse(i, 3)]).collect()
}

/// Cell-centred `side × side` grid.
pub fn grid_centres(side: usize) -> Vec<[f64; 2]> {
    let h = 1.0 / side as f64;
    (0..side)
        .flat_map(|j| (0..side).map(move |i| [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]))
        .collect()
}

/// Two comma (or whitespace) separated columns in `[0,1)`, no header.
pub fn parse_centres_csv(text: &str) -> Result<Vec<[f64; 2]>, RbfError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let bad = |msg: String| RbfError::InvalidCentres(format!("line {}: {msg}", lineno + 1));
        if cols.len() != 2 {
            return Err(bad(format!("expected 2 columns, found {}", cols.len())));
        }
        let mut p = [0.0; 2];
        for (v, s) in p.iter_mut().zip(&cols) {
            *v = s.parse().map_err(|_| bad(format!("not a number: {s:?}")))?;
            if !(0.0..1.0).contains(v) {
                return Err(bad(format!("coordinate {v} outside [0,1)")));
            }
        }
        out.push(p);
    }
    if out.is_empty() {
        return Err(RbfError::InvalidCentres("no centres in file".into()));
    }
    let d = min_pairwise_distance(&out);
    if d <= DUPLICATE_TOL {
        return Err(RbfError::InvalidCentres(format!("duplicate centres (min distance {d:e})")));
    }
    Ok(out)
}

pub fn read_centres_csv(path: &Path) -> Result<Vec<[f64; 2]>, RbfError> {
    let text = std::fs::read_to_string(path).map_err(|e| RbfError::CentreFile {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_centres_csv(&text)
}
