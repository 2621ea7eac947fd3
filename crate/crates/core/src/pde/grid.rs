use serde::{Deserialize, Serialize};

use crate::error::PdeError;
use crate::models::ModelSpec;

/// How the scheme closes the stencil at the edge of the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    /// Ghost value `2 u_0 - u_1`: zero curvature at the edge, so the second
    /// difference vanishes and first differences become one-sided.
    #[default]
    LinearExtrapolation,
    /// Ghost value `u_1`: a reflecting wall with zero normal derivative.
    ClampedGradient,
}

/// One uniform coordinate axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub h: f64,
    pub nodes: usize,
}

impl Axis {
    /// Axis over `[lo, hi]` with spacing `h`. `hi - lo` must be an integer
    /// multiple of `h` up to rounding.
    pub fn new(lo: f64, hi: f64, h: f64) -> Result<Self, PdeError> {
        if !(lo.is_finite() && hi.is_finite() && h.is_finite()) || h <= 0.0 || hi <= lo {
            return Err(PdeError::InvalidGrid(format!(
                "axis [{lo}, {hi}] with spacing {h}"
            )));
        }
        let cells = (hi - lo) / h;
        let rounded = cells.round();
        if (cells - rounded).abs() > 1e-6 * rounded.max(1.0) {
            return Err(PdeError::InvalidGrid(format!(
                "spacing {h} does not divide [{lo}, {hi}]"
            )));
        }
        let nodes = rounded as usize + 1;
        if nodes < 3 {
            return Err(PdeError::InvalidGrid(format!(
                "axis [{lo}, {hi}] needs at least 3 nodes"
            )));
        }
        Ok(Self { lo, h, nodes })
    }

    pub fn hi(&self) -> f64 {
        self.lo + (self.nodes - 1) as f64 * self.h
    }

    #[inline]
    pub fn coord(&self, j: usize) -> f64 {
        self.lo + j as f64 * self.h
    }

    pub fn contains(&self, x: f64) -> bool {
        let tol = 1e-12 * self.h;
        x >= self.lo - tol && x <= self.hi() + tol
    }
}

/// A tensor grid in `n <= 2` space dimensions, with an optional fixed time
/// step and a boundary policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Axis>,
    dt: Option<f64>,
    boundary: BoundaryPolicy,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self, PdeError> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(PdeError::InvalidGrid(format!(
                "{} axes (supported: 1 or 2)",
                axes.len()
            )));
        }
        Ok(Self {
            axes,
            dt: None,
            boundary: BoundaryPolicy::default(),
        })
    }

    /// One-dimensional grid on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, h: f64) -> Result<Self, PdeError> {
        Self::new(vec![Axis::new(lo, hi, h)?])
    }

    /// Symmetric box `[-half_width, half_width]^n`, widened so that it is a
    /// whole number of cells and the origin is a node.
    pub fn centered(n: usize, half_width: f64, h: f64) -> Result<Self, PdeError> {
        if !(h > 0.0) || !(half_width > 0.0) {
            return Err(PdeError::InvalidGrid(format!(
                "half-width {half_width}, spacing {h}"
            )));
        }
        let cells = (half_width / h - 1e-9).ceil().max(1.0);
        let w = cells * h;
        Self::new((0..n).map(|_| Axis::new(-w, w, h)).collect::<Result<_, _>>()?)
    }

    /// Truncation box for a model evaluated at `x_eval`: half-width
    /// `max(8 / eta, 4) (1 + |x_eval|)`. The distance to the edge then
    /// exceeds several relaxation lengths of the forward dynamics.
    pub fn for_model(model: &ModelSpec, x_eval: &[f64], h: f64) -> Result<Self, PdeError> {
        let eta = model.constants().eta;
        let reach = if eta > 0.0 { (8.0 / eta).max(4.0) } else { 8.0 };
        let norm = x_eval.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self::centered(model.n(), reach * (1.0 + norm), h)
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }

    pub fn with_boundary(mut self, boundary: BoundaryPolicy) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn dt(&self) -> Option<f64> {
        self.dt
    }

    pub fn boundary(&self) -> BoundaryPolicy {
        self.boundary
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest spacing over the axes.
    pub fn h_max(&self) -> f64 {
        self.axes.iter().map(|a| a.h).fold(0.0, f64::max)
    }

    /// Per-axis indices of a flat node index (axis 0 varies fastest).
    #[inline]
    pub fn split(&self, i: usize) -> [usize; 2] {
        let n0 = self.axes[0].nodes;
        [i % n0, i / n0]
    }

    #[inline]
    pub fn flat(&self, j: [usize; 2]) -> usize {
        j[0] + j[1] * self.axes[0].nodes
    }

    /// Coordinates of node `i`; unused trailing entries are zero.
    #[inline]
    pub fn node(&self, i: usize) -> [f64; 2] {
        let j = self.split(i);
        let mut x = [0.0; 2];
        for (k, a) in self.axes.iter().enumerate() {
            x[k] = a.coord(j[k]);
        }
        x
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.axes.iter().zip(x).all(|(a, &v)| a.contains(v))
    }

    /// Flat index of the node closest to `x`, clamped into the box.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut j = [0usize; 2];
        for (k, a) in self.axes.iter().enumerate() {
            let r = ((x[k] - a.lo) / a.h).round();
            j[k] = r.clamp(0.0, (a.nodes - 1) as f64) as usize;
        }
        self.flat(j)
    }

    /// `true` when node `i` sits at least `fraction` of each axis length away
    /// from both edges.
    pub fn is_interior(&self, i: usize, fraction: f64) -> bool {
        let j = self.split(i);
        self.axes.iter().enumerate().all(|(k, a)| {
            let len = (a.nodes - 1) as f64;
            let p = j[k] as f64;
            p >= fraction * len - 1e-9 && len - p >= fraction * len - 1e-9
        })
    }

    /// Number of explicit steps and the step size used to cover `horizon`
    /// when the monotonicity limit is `limit`.
    pub fn steps_for(&self, horizon: f64, limit: f64) -> Result<(usize, f64), PdeError> {
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(PdeError::InvalidArgument(format!("horizon {horizon}")));
        }
        if horizon == 0.0 {
            return Ok((0, 0.0));
        }
        let dt_max = match self.dt {
            Some(dt) => {
                if !(dt > 0.0) {
                    return Err(PdeError::InvalidGrid(format!("time step {dt}")));
                }
                if dt > limit * (1.0 + 1e-12) {
                    return Err(PdeError::Cfl { dt, limit });
                }
                dt
            }
            None => 0.9 * limit,
        };
        let steps = if dt_max.is_finite() {
            ((horizon / dt_max) - 1e-9).ceil().max(1.0) as usize
        } else {
            1
        };
        Ok((steps, horizon / steps as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_axis() {
        let g = Grid::uniform(-1.0, 1.0, 0.25).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g.node(4)[0], 0.0);
        assert_eq!(g.axes()[0].hi(), 1.0);
        assert!(Grid::uniform(0.0, 1.0, 0.3).is_err());
        assert!(Grid::uniform(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn centered_contains_origin() {
        let g = Grid::centered(1, 7.9, 0.5).unwrap();
        assert_eq!(g.axes()[0].lo, -8.0);
        assert_eq!(g.node(g.nearest(&[0.0]))[0], 0.0);
        let g2 = Grid::centered(2, 1.0, 0.5).unwrap();
        assert_eq!(g2.len(), 25);
        assert_eq!(g2.node(g2.flat([1, 3])), [-0.5, 0.5]);
    }

    #[test]
    fn steps_respect_fixed_dt() {
        let g = Grid::uniform(-1.0, 1.0, 0.5).unwrap().with_dt(0.1);
        assert!(matches!(g.steps_for(1.0, 0.05), Err(PdeError::Cfl { .. })));
        let (n, dt) = g.steps_for(1.0, 0.2).unwrap();
        assert_eq!(n, 10);
        assert!((dt - 0.1).abs() < 1e-15);
    }

    #[test]
    fn interior_band() {
        let g = Grid::uniform(-4.0, 4.0, 1.0).unwrap();
        let inside: Vec<f64> = (0..g.len())
            .filter(|&i| g.is_interior(i, 0.25))
            .map(|i| g.node(i)[0])
            .collect();
        assert_eq!(inside, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
    }
}
