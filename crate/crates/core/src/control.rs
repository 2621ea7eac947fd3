//! Ergodic control with a finite control set.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::ergodic::ErgodicSolution;
use crate::error::{ControlError, ModelError, PdeError};
use crate::expr::Expression;
use crate::mc_oracle::{girsanov_expectation, Feedback, LatticeParams};
use crate::models::{dot, hamiltonian_from_control, ModelSpec};
use crate::pde::Grid;

/// Finite control set `U`, running cost `kappa(x, u)` and the drift
/// change `R(u)` (one expression per Brownian coordinate).
#[derive(Debug, Clone)]
pub struct ControlSpec {
    pub controls: Vec<Vec<f64>>,
    pub kappa: Expression,
    pub r: Vec<Expression>,
}

impl ControlSpec {
    pub fn new(controls: Vec<Vec<f64>>, kappa: Expression, r: Vec<Expression>) -> Result<Self, ModelError> {
        let m = controls.first().map_or(0, Vec::len);
        if controls.iter().any(|u| u.len() != m) {
            return Err(ModelError::Dimension("control points have differing lengths".into()));
        }
        Ok(Self { controls, kappa, r })
    }
}

/// A feedback `u*(x)` tabulated on a grid; off-grid states use the nearest
/// node.
#[derive(Debug, Clone)]
pub struct FeedbackTable {
    grid: Grid,
    indices: Vec<usize>,
    controls: Vec<Vec<f64>>,
}

impl FeedbackTable {
    pub fn new(grid: Grid, indices: Vec<usize>, controls: Vec<Vec<f64>>) -> Result<Self, ControlError> {
        if indices.len() != grid.len() {
            return Err(PdeError::GridMismatch.into());
        }
        if let Some(&k) = indices.iter().find(|&&k| k >= controls.len()) {
            return Err(ModelError::Config(format!("control index {k} out of range")).into());
        }
        Ok(Self {
            grid,
            indices,
            controls,
        })
    }

    /// A feedback that always plays control `index`.
    pub fn constant(grid: &Grid, index: usize, controls: Vec<Vec<f64>>) -> Result<Self, ControlError> {
        Self::new(grid.clone(), vec![index; grid.len()], controls)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn control_at(&self, x: &[f64]) -> &[f64] {
        &self.controls[self.control_index(x)]
    }

    /// Rows `x[,y],u_index,u_value` with the control's components joined by
    /// `;`.
    pub fn to_csv(&self) -> String {
        let n = self.grid.dim();
        let mut s = String::from(if n == 1 { "x,u_index,u_value\n" } else { "x,y,u_index,u_value\n" });
        for (i, &k) in self.indices.iter().enumerate() {
            let x = self.grid.node(i);
            for c in &x[..n] {
                let _ = write!(s, "{c},");
            }
            let u: Vec<String> = self.controls[k].iter().map(f64::to_string).collect();
            let _ = writeln!(s, "{k},{}", u.join(";"));
        }
        s
    }
}

impl Feedback for FeedbackTable {
    fn control_index(&self, x: &[f64]) -> usize {
        self.indices[self.grid.nearest(x)]
    }
}

/// `u*(x) = argmin_u kappa(x, u) + <R(u), sigma(x)^T Dv(x)>` at every node of
/// `grid`; ties go to the lowest index.
pub fn optimal_feedback(
    c: &ControlSpec,
    sol: &ErgodicSolution,
    m: &ModelSpec,
    grid: &Grid,
) -> Result<FeedbackTable, ControlError> {
    let ham = hamiltonian_from_control(c)?;
    let n = grid.dim();
    let mut indices = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let x = &grid.node(i)[..n];
        let z = [dot(&m.sigma_at(x)?, &sol.v.gradient(x)?)];
        let (_, k) = ham.argmin(x, &z).map_err(|source| ModelError::Evaluation {
            field: "hamiltonian".into(),
            point: x.to_vec(),
            source,
        })?;
        indices.push(k);
    }
    FeedbackTable::new(grid.clone(), indices, c.controls.clone())
}

/// Long-run average cost of a feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct CostEstimate {
    /// `(T, J_T)` with `J_T` the worst-case expected cost up to `T`.
    pub per_horizon: Vec<(f64, f64)>,
    /// Slope of `J_T` over the two largest horizons.
    pub estimate: f64,
}

impl CostEstimate {
    /// `estimate - lambda`.
    pub fn gap(&self, lambda: f64) -> f64 {
        self.estimate - lambda
    }
}

/// Worst-case long-run cost `lim J_T(x, u) / T` of `feedback` under the
/// Girsanov-shifted dynamics, from the slope of `J_T` over the two largest
/// horizons of `t_list`. The horizons are solved in parallel on the lattice.
pub fn evaluate_j(
    m: &ModelSpec,
    c: &ControlSpec,
    feedback: &dyn Feedback,
    x: &[f64],
    t_list: &[f64],
    params: &LatticeParams,
) -> Result<CostEstimate, ControlError> {
    if t_list.len() < 2 || t_list.windows(2).any(|w| w[1] <= w[0]) || t_list[0] <= 0.0 {
        return Err(ControlError::HorizonInstability(format!(
            "horizons must be positive and increasing, at least two: {t_list:?}"
        )));
    }
    let values: Vec<f64> = t_list
        .par_iter()
        .map(|&t| girsanov_expectation(m, feedback, c, None, t, params, x))
        .collect::<Result<_, _>>()?;
    let slopes: Vec<f64> = (1..values.len())
        .map(|i| (values[i] - values[i - 1]) / (t_list[i] - t_list[i - 1]))
        .collect();
    let estimate = *slopes.last().expect("two horizons");
    if slopes.len() >= 2 {
        let prev = slopes[slopes.len() - 2];
        if (estimate - prev).abs() > 0.05 * (1.0 + estimate.abs()) {
            return Err(ControlError::HorizonInstability(format!(
                "cost slopes {slopes:?} have not settled"
            )));
        }
    }
    Ok(CostEstimate {
        per_horizon: t_list.iter().copied().zip(values).collect(),
        estimate,
    })
}
