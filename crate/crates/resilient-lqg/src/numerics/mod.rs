//! Shared numerical substrate: polynomials, symmetric eigenproblems, norms, ODE steps, quadrature.

mod geometry;
mod linalg;
mod linpoly;
mod ode;
mod poly;
mod quad;

pub use geometry::Ellipsoid;
pub use linalg::{
    max_eigenvalue, min_eigenvalue, null_space, observability_matrix, psd_sqrt, rank, solve_spd, spectral_norm,
    sym_eig, symmetrize, SymMatrix,
};
pub use linpoly::{gram_to_poly, AffineSym, LinPoly};
pub use ode::{rk4_path, rk4_step};
pub use poly::{poly_eval, poly_grad, poly_mul, Poly};
pub use quad::{cumulative_trapezoid, trapezoid};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("polynomial variable counts differ ({left} vs {right})")]
    VariableMismatch { left: usize, right: usize },
    #[error("polynomial degree {degree} exceeds supported maximum {max}")]
    DegreeTooHigh { degree: u32, max: u32 },
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("non-finite matrix entry")]
    NonFinite,
    #[error("matrix is not positive semidefinite")]
    NotPsd,
    #[error("iteration did not converge")]
    NonConvergence,
}
