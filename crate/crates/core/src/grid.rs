//! Periodic space-time grid and the primitive stencils.
//!
//! Grid functions are stored row-major with the first index fastest:
//! node `(i, j)` lives at `j * n_x + i`. All stencils wrap periodically.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{SparseMatrix, TripletBuilder};

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid needs at least 2 nodes per dimension (got {n_x}x{n_y})")]
    TooSmall { n_x: usize, n_y: usize },
    #[error("grid needs at least one time-step")]
    NoTimeSteps,
    #[error("mesh width and time-step must be positive and finite (h = {h}, tau = {tau})")]
    BadSpacing { h: f64, tau: f64 },
    #[error("field has length {got}, grid expects {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("field contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_x: usize,
    pub n_y: usize,
    pub n_t: usize,
    pub h: f64,
    pub tau: f64,
}

impl GridSpec {
    /// Unit square in space, unit time interval: `h = 1/n_x`, `tau = 1/n_t`.
    pub fn new(n_x: usize, n_y: usize, n_t: usize) -> Result<Self, GridError> {
        Self::with_spacing(n_x, n_y, n_t, 1.0 / n_x.max(1) as f64, 1.0 / n_t.max(1) as f64)
    }

    pub fn with_spacing(n_x: usize, n_y: usize, n_t: usize, h: f64, tau: f64) -> Result<Self, GridError> {
        if n_x < 2 || n_y < 2 {
            return Err(GridError::TooSmall { n_x, n_y });
        }
        if n_t < 1 {
            return Err(GridError::NoTimeSteps);
        }
        if !(h > 0.0 && h.is_finite() && tau > 0.0 && tau.is_finite()) {
            return Err(GridError::BadSpacing { h, tau });
        }
        Ok(Self { n_x, n_y, n_t, h, tau })
    }

    /// Nodes per time-step.
    #[inline]
    pub fn n(&self) -> usize {
        self.n_x * self.n_y
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n_x + i
    }

    /// Coefficient multiplying the half-difference stencils in every transport
    /// block; `(tau/h) * (f[i+1] - f[i-1]) / 2` is the Lax-Friedrichs flux term.
    #[inline]
    pub fn transport_scale(&self) -> f64 {
        self.tau / self.h
    }

    /// Node coordinates in `[0, n_x h) x [0, n_y h)`.
    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.h, j as f64 * self.h)
    }

    fn check(&self, f: &[f64]) {
        debug_assert_eq!(f.len(), self.n(), "grid function length mismatch");
    }

    /// Centred half-difference in the first dimension: `g = (f[i+1,j] - f[i-1,j]) / 2`.
    pub fn d1(&self, f: &[f64], out: &mut [f64]) {
        self.check(f);
        let nx = self.n_x;
        for j in 0..self.n_y {
            let row = j * nx;
            for i in 0..nx {
                let ip = if i + 1 == nx { 0 } else { i + 1 };
                let im = if i == 0 { nx - 1 } else { i - 1 };
                out[row + i] = 0.5 * (f[row + ip] - f[row + im]);
            }
        }
    }

    /// Centred half-difference in the second dimension.
    pub fn d2(&self, f: &[f64], out: &mut [f64]) {
        self.check(f);
        let (nx, ny) = (self.n_x, self.n_y);
        for j in 0..ny {
            let jp = if j + 1 == ny { 0 } else { j + 1 };
            let jm = if j == 0 { ny - 1 } else { j - 1 };
            for i in 0..nx {
                out[j * nx + i] = 0.5 * (f[jp * nx + i] - f[jm * nx + i]);
            }
        }
    }

    /// `D1ᵀ = -D1`.
    pub fn d1_t(&self, f: &[f64], out: &mut [f64]) {
        self.d1(f, out);
        out.iter_mut().for_each(|v| *v = -*v);
    }

    pub fn d2_t(&self, f: &[f64], out: &mut [f64]) {
        self.d2(f, out);
        out.iter_mut().for_each(|v| *v = -*v);
    }

    /// Four-point average of the periodic neighbours. Symmetric.
    pub fn dt(&self, f: &[f64], out: &mut [f64]) {
        self.check(f);
        let (nx, ny) = (self.n_x, self.n_y);
        for j in 0..ny {
            let jp = if j + 1 == ny { 0 } else { j + 1 };
            let jm = if j == 0 { ny - 1 } else { j - 1 };
            for i in 0..nx {
                let ip = if i + 1 == nx { 0 } else { i + 1 };
                let im = if i == 0 { nx - 1 } else { i - 1 };
                out[j * nx + i] = 0.25
                    * (f[j * nx + ip] + f[j * nx + im] + f[jp * nx + i] + f[jm * nx + i]);
            }
        }
    }

    /// `out += alpha * Dt f`
    pub fn dt_add(&self, alpha: f64, f: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; self.n()];
        self.dt(f, &mut tmp);
        crate::linalg::axpy(alpha, &tmp, out);
    }

    /// Periodic neighbour indices `(i+1, i-1, j+1, j-1)` of node `(i, j)`.
    pub fn neighbours(&self, i: usize, j: usize) -> [usize; 4] {
        let (nx, ny) = (self.n_x, self.n_y);
        [
            self.idx((i + 1) % nx, j),
            self.idx((i + nx - 1) % nx, j),
            self.idx(i, (j + 1) % ny),
            self.idx(i, (j + ny - 1) % ny),
        ]
    }

    /// Sparse materialisation of `D1` (half-difference).
    pub fn d1_matrix(&self) -> SparseMatrix {
        let mut b = TripletBuilder::new(self.n(), self.n());
        for j in 0..self.n_y {
            for i in 0..self.n_x {
                let [ip, im, _, _] = self.neighbours(i, j);
                b.push(self.idx(i, j), ip, 0.5);
                b.push(self.idx(i, j), im, -0.5);
            }
        }
        b.build()
    }

    pub fn d2_matrix(&self) -> SparseMatrix {
        let mut b = TripletBuilder::new(self.n(), self.n());
        for j in 0..self.n_y {
            for i in 0..self.n_x {
                let [_, _, jp, jm] = self.neighbours(i, j);
                b.push(self.idx(i, j), jp, 0.5);
                b.push(self.idx(i, j), jm, -0.5);
            }
        }
        b.build()
    }

    pub fn dt_matrix(&self) -> SparseMatrix {
        let mut b = TripletBuilder::new(self.n(), self.n());
        for j in 0..self.n_y {
            for i in 0..self.n_x {
                for nb in self.neighbours(i, j) {
                    b.push(self.idx(i, j), nb, 0.25);
                }
            }
        }
        b.build()
    }

    /// Positive semidefinite five-point stencil `4 f - (sum of neighbours)`,
    /// i.e. `h^2` times the periodic negative Laplacian.
    pub fn neg_laplacian_h2_matrix(&self) -> SparseMatrix {
        let mut b = TripletBuilder::new(self.n(), self.n());
        for j in 0..self.n_y {
            for i in 0..self.n_x {
                let r = self.idx(i, j);
                b.push(r, r, 4.0);
                for nb in self.neighbours(i, j) {
                    b.push(r, nb, -1.0);
                }
            }
        }
        b.build()
    }
}

/// One grid function, tagged with its time index `k` (0 is the initial image).
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: GridSpec,
    pub time_index: usize,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(grid: GridSpec, time_index: usize, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.n() {
            return Err(GridError::LengthMismatch {
                got: values.len(),
                expected: grid.n(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(GridError::NonFinite);
        }
        Ok(Self {
            grid,
            time_index,
            values,
        })
    }

    pub fn zeros(grid: GridSpec, time_index: usize) -> Self {
        Self {
            grid,
            time_index,
            values: vec![0.0; grid.n()],
        }
    }

    pub fn constant(grid: GridSpec, time_index: usize, c: f64) -> Self {
        Self {
            grid,
            time_index,
            values: vec![c; grid.n()],
        }
    }

    pub fn from_fn(grid: GridSpec, time_index: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n());
        for j in 0..grid.n_y {
            for i in 0..grid.n_x {
                let (x1, x2) = grid.coords(i, j);
                values.push(f(x1, x2));
            }
        }
        Self {
            grid,
            time_index,
            values,
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    fn map_stencil(&self, op: impl Fn(&GridSpec, &[f64], &mut [f64])) -> Field {
        let mut out = vec![0.0; self.grid.n()];
        op(&self.grid, &self.values, &mut out);
        Field {
            grid: self.grid,
            time_index: self.time_index,
            values: out,
        }
    }

    pub fn apply_d1(&self) -> Field {
        self.map_stencil(GridSpec::d1)
    }

    pub fn apply_d2(&self) -> Field {
        self.map_stencil(GridSpec::d2)
    }

    pub fn apply_d1_transpose(&self) -> Field {
        self.map_stencil(GridSpec::d1_t)
    }

    pub fn apply_d2_transpose(&self) -> Field {
        self.map_stencil(GridSpec::d2_t)
    }

    pub fn apply_dt(&self) -> Field {
        self.map_stencil(GridSpec::dt)
    }
}
