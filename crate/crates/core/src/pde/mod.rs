//! Grids, nodal fields and the monotone explicit finite-difference scheme
//! for the parabolic, discounted elliptic and ergodic problems.

mod field;
mod grid;
mod operator;
mod solver;

pub use field::{Field, TimeField};
pub use grid::{Axis, BoundaryPolicy, Grid};
pub use operator::{assemble_operator, PointwiseOperator};
pub use solver::{
    residual, scheme_residual, solve_discounted, solve_finite_bsde, solve_infinite,
    solve_parabolic,
};

pub(crate) use operator::{Operator, Stencil};
pub(crate) use solver::Marcher;
