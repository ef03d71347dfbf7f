//! The stacked Newton iterate `z = [y, m, p]` over all time-steps.
//!
//! Time index `k` runs from 1 to `N_t`; `y` at `k = 0` is the fixed initial
//! image and lives outside `z`. Per time-step the velocity is stored as
//! `[m1; m2]`.

use std::hash::{Hash, Hasher};

use crate::grid::{Field, GridError, GridSpec};

/// Offsets of the three variable groups inside a stacked vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub n_t: usize,
}

impl Layout {
    pub fn new(grid: &GridSpec) -> Self {
        Self {
            n: grid.n(),
            n_t: grid.n_t,
        }
    }

    pub fn y_len(&self) -> usize {
        self.n * self.n_t
    }

    pub fn m_len(&self) -> usize {
        2 * self.n * self.n_t
    }

    pub fn p_len(&self) -> usize {
        self.n * self.n_t
    }

    pub fn total(&self) -> usize {
        4 * self.n * self.n_t
    }

    pub fn m_offset(&self) -> usize {
        self.y_len()
    }

    pub fn p_offset(&self) -> usize {
        self.y_len() + self.m_len()
    }

    /// Split a stacked vector into its `(y, m, p)` views.
    pub fn split<'a>(&self, z: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let (y, rest) = z.split_at(self.y_len());
        let (m, p) = rest.split_at(self.m_len());
        (y, m, p)
    }

    pub fn split_mut<'a>(&self, z: &'a mut [f64]) -> (&'a mut [f64], &'a mut [f64], &'a mut [f64]) {
        let (y, rest) = z.split_at_mut(self.y_len());
        let (m, p) = rest.split_at_mut(self.m_len());
        (y, m, p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeState {
    pub grid: GridSpec,
    pub y0: Vec<f64>,
    pub z: Vec<f64>,
}

impl SpaceTimeState {
    pub fn zeros(grid: GridSpec, y0: Vec<f64>) -> Self {
        let layout = Layout::new(&grid);
        Self {
            grid,
            y0,
            z: vec![0.0; layout.total()],
        }
    }

    pub fn from_parts(grid: GridSpec, y0: Vec<f64>, y: &[f64], m: &[f64], p: &[f64]) -> Result<Self, GridError> {
        let layout = Layout::new(&grid);
        for (got, expected) in [
            (y0.len(), grid.n()),
            (y.len(), layout.y_len()),
            (m.len(), layout.m_len()),
            (p.len(), layout.p_len()),
        ] {
            if got != expected {
                return Err(GridError::LengthMismatch { got, expected });
            }
        }
        let mut z = Vec::with_capacity(layout.total());
        z.extend_from_slice(y);
        z.extend_from_slice(m);
        z.extend_from_slice(p);
        Ok(Self { grid, y0, z })
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.grid)
    }

    pub fn y(&self) -> &[f64] {
        self.layout().split(&self.z).0
    }

    pub fn m(&self) -> &[f64] {
        self.layout().split(&self.z).1
    }

    pub fn p(&self) -> &[f64] {
        self.layout().split(&self.z).2
    }

    pub fn y_mut(&mut self) -> &mut [f64] {
        let l = self.layout();
        l.split_mut(&mut self.z).0
    }

    pub fn m_mut(&mut self) -> &mut [f64] {
        let l = self.layout();
        l.split_mut(&mut self.z).1
    }

    pub fn p_mut(&mut self) -> &mut [f64] {
        let l = self.layout();
        l.split_mut(&mut self.z).2
    }

    /// `y` at time index `k`, with `k = 0` the initial image.
    pub fn y_at(&self, k: usize) -> &[f64] {
        let n = self.grid.n();
        if k == 0 {
            &self.y0
        } else {
            &self.y()[(k - 1) * n..k * n]
        }
    }

    pub fn m1_at(&self, k: usize) -> &[f64] {
        let n = self.grid.n();
        &self.m()[(k - 1) * 2 * n..(k - 1) * 2 * n + n]
    }

    pub fn m2_at(&self, k: usize) -> &[f64] {
        let n = self.grid.n();
        &self.m()[(k - 1) * 2 * n + n..k * 2 * n]
    }

    pub fn p_at(&self, k: usize) -> &[f64] {
        let n = self.grid.n();
        &self.p()[(k - 1) * n..k * n]
    }

    pub fn y_field(&self, k: usize) -> Field {
        Field {
            grid: self.grid,
            time_index: k,
            values: self.y_at(k).to_vec(),
        }
    }

    /// Hash of the exact bit patterns of `y0` and `z`. Used to detect a
    /// preconditioner built for a different iterate.
    pub fn fingerprint(&self) -> u64 {
        fingerprint_of(&self.y0, &self.z)
    }
}

pub(crate) fn fingerprint_of(a: &[f64], b: &[f64]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    a.len().hash(&mut h);
    for v in a.iter().chain(b) {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}
