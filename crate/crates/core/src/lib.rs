//! Solvers for transport-constrained optimal transport and optical flow.
//!
//! The pipeline is: a periodic space-time [`grid`], implicit Lax-Friedrichs
//! [`transport`] operators, the [`kkt`] saddle-point systems, [`krylov`]
//! solvers with block [`precond`]itioners, an [`rbf`] collocation variant, and
//! the outer Newton loop in [`driver`].

pub mod grid;
pub mod linalg;
pub mod state;
pub mod transport;
pub mod kkt;
pub mod krylov;
pub mod precond;
pub mod rbf;
pub mod driver;
