//! Linear autonomous neutral delay differential equations
//!
//! ```text
//! d/dt (x(t) - L x_t) = R x_t + q(t),   x_0 = φ,
//! ```
//!
//! on ℂⁿ, where `L` and `R` are matrices of complex measures on `[-h, 0]`,
//! `L` puts no mass near zero, and `φ` may be discontinuous. The equation is
//! solved in its integrated form, so jumps of `φ` are carried forward by the
//! point delays of `L` instead of being smoothed.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod history;
pub mod measures;
pub mod oracle;
pub mod poly;
pub mod pwfun;
pub mod quad;
pub mod solver;
pub mod voc;

pub use error::{Error, Result};
pub use history::{max_norm, same_time, History, Side, TIME_EPS};
pub use measures::{Atom, ComplexMeasure, DensityPiece, FunctionalMatrix};
pub use num_complex::Complex64;
pub use poly::Poly;
pub use pwfun::{Node, Piece, PiecewiseFn};
pub use solver::{
    fundamental_solution, propagate_breakpoints, semigroup_restart, smoothed_part, solve_homogeneous,
    solve_inhomogeneous, BoundsReport, FundamentalSolution, Problem, Restart, SmoothedPart, Solution, SolverConfig,
};
