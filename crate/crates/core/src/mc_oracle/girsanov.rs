use crate::control::ControlSpec;
use crate::error::OracleError;
use crate::expr::{Expression, Vars};
use crate::models::{dot, hamiltonian_from_control, ModelSpec};

use super::lattice::{expectation, tabulate, Branch, Lattice, LatticeParams};

/// A feedback control: the index in the control set used at state `x`.
pub trait Feedback: Sync {
    fn control_index(&self, x: &[f64]) -> usize;
}

impl<F: Fn(&[f64]) -> usize + Sync> Feedback for F {
    fn control_index(&self, x: &[f64]) -> usize {
        self(x)
    }
}

/// Worst-case expected cost `sup E^u[int_0^T kappa(X_s, u(X_s)) ds +
/// terminal(X_T)]` under the Girsanov-shifted dynamics, where the forward
/// drift gains `sigma(x) R(u(x))` and the volatility is still maximized.
/// Returns the value on every lattice node.
pub fn girsanov_field(
    m: &ModelSpec,
    feedback: &dyn Feedback,
    c: &ControlSpec,
    terminal: Option<&Expression>,
    horizon: f64,
    params: &LatticeParams,
) -> Result<(Vec<f64>, Vec<f64>), OracleError> {
    let ham = hamiltonian_from_control(c)?;
    let alpha2 = m.constants().alpha2;
    let grid = params.grid()?;
    let mut index = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let x = [grid.node(i)[0]];
        let k = feedback.control_index(&x);
        if k >= ham.controls().len() {
            return Err(OracleError::InvalidArgument(format!(
                "feedback index {k} at x = {} outside the control set",
                x[0]
            )));
        }
        let r = &ham.r_values()[k];
        let norm = dot(r, r).sqrt();
        if norm > alpha2 * (1.0 + 1e-12) {
            return Err(OracleError::CoefficientBound(format!(
                "|R(u)| = {norm} exceeds alpha2 = {alpha2} at x = {}",
                x[0]
            )));
        }
        index.push(k);
    }
    let shift = |x: &[f64], s: f64| {
        let k = feedback.control_index(x);
        s * ham.r_values()[k][0]
    };
    let lat = Lattice::new(m, m.interval(), params, horizon, Some(&shift))?;
    let mut cost = Vec::with_capacity(lat.xs.len());
    for (j, &x) in lat.xs.iter().enumerate() {
        let u = &ham.controls()[index[j]];
        cost.push(
            c.kappa
                .eval(&Vars::xu(&[x], u))
                .map_err(|_| OracleError::NonFinite { path: j, step: 0 })?,
        );
    }
    let w0 = match terminal {
        Some(e) => tabulate(&lat.xs, e)?,
        None => vec![0.0; lat.xs.len()],
    };
    let dt = lat.dt;
    let node = |j: usize, _v: f64, br: &[Branch; 3]| -> Result<f64, OracleError> {
        Ok(expectation(br) + dt * cost[j])
    };
    let w = lat.solve(w0, &node)?;
    Ok((lat.xs.clone(), w))
}

/// [`girsanov_field`] evaluated at `x`.
pub fn girsanov_expectation(
    m: &ModelSpec,
    feedback: &dyn Feedback,
    c: &ControlSpec,
    terminal: Option<&Expression>,
    horizon: f64,
    params: &LatticeParams,
    x: &[f64],
) -> Result<f64, OracleError> {
    let (_, w) = girsanov_field(m, feedback, c, terminal, horizon, params)?;
    let grid = params.grid()?;
    let field =
        crate::pde::Field::new(grid, w).map_err(|e| OracleError::InvalidArgument(e.to_string()))?;
    field
        .interpolate(x)
        .map_err(|e| OracleError::InvalidArgument(e.to_string()))
}
