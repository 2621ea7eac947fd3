//! The monotone explicit discretization of
//!
//! ```text
//! F[u](x) = G(H) + <b, Du> + f(x, u, sigma^T Du),
//! H       = sigma^T D^2u sigma + 2 <Du, h> + 2 g(x, u, sigma^T Du)
//! ```
//!
//! Second derivatives use central differences (with a sign-adapted seven
//! point cross stencil when `n = 2`), first derivatives in the `b` and `h`
//! terms are upwinded, and the `z` argument of the drivers is a central
//! difference. The latter is monotone only while the diffusion dominates,
//! which [`Operator::new`] checks node by node.

use rayon::prelude::*;

use crate::error::{ModelError, PdeError};
use crate::expr::{EvalError, Vars};
use crate::gcalculus::GFunction;
use crate::models::{dot, Driver, DriverShift, ModelSpec};

use super::field::Field;
use super::grid::{BoundaryPolicy, Grid};

/// Pointwise pieces of the discrete operator at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseOperator {
    /// The `d x d` matrix `H` fed to `G` (a single entry for `d = 1`).
    pub h: Vec<f64>,
    /// `<b, Du>`.
    pub drift_term: f64,
    /// `f(x, u, z)` including any discount or constant shift.
    pub driver_term: f64,
    /// `G(H) + drift_term + driver_term`.
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stencil {
    /// The scheme: upwind first differences in the `b` and `h` terms.
    Upwind,
    /// Central first differences everywhere; used to measure consistency.
    Centered,
}

#[derive(Debug, Clone, Copy, Default)]
struct NodeCoef {
    b: [f64; 2],
    h: [f64; 2],
    s: [f64; 2],
}

#[derive(Debug, Clone)]
enum NodeDriver {
    Zero,
    /// Driver depending on `x` only, tabulated per node.
    Fixed(Vec<f64>),
    /// Control Hamiltonian with `kappa` tabulated per node and control.
    Table { k: usize, kappa: Vec<f64>, r: Vec<f64> },
    General(Driver),
}

impl NodeDriver {
    fn build(d: &Driver, grid: &Grid) -> Result<Self, ModelError> {
        let n = grid.dim();
        if d.is_zero() {
            return Ok(NodeDriver::Zero);
        }
        match d {
            Driver::Expr(e) if !e.uses_y() && !e.uses_z() => {
                let mut vals = Vec::with_capacity(grid.len());
                for i in 0..grid.len() {
                    let x = grid.node(i);
                    vals.push(e.eval(&Vars::x(&x[..n])).map_err(|source| {
                        ModelError::Evaluation {
                            field: "driver".into(),
                            point: x[..n].to_vec(),
                            source,
                        }
                    })?);
                }
                Ok(NodeDriver::Fixed(vals))
            }
            Driver::Hamiltonian(ham) if ham.r_values().iter().all(|r| r.len() == 1) => {
                let k = ham.controls().len();
                let mut kappa = Vec::with_capacity(grid.len() * k);
                for i in 0..grid.len() {
                    let x = grid.node(i);
                    for c in 0..k {
                        kappa.push(ham.kappa_at(&x[..n], c).map_err(|source| {
                            ModelError::Evaluation {
                                field: "kappa".into(),
                                point: x[..n].to_vec(),
                                source,
                            }
                        })?);
                    }
                }
                let r = ham.r_values().iter().map(|r| r[0]).collect();
                Ok(NodeDriver::Table { k, kappa, r })
            }
            other => Ok(NodeDriver::General(other.clone())),
        }
    }

    #[inline(always)]
    fn eval(&self, i: usize, grid: &Grid, y: f64, z: f64) -> Result<f64, EvalError> {
        match self {
            NodeDriver::Zero => Ok(0.0),
            NodeDriver::Fixed(v) => Ok(v[i]),
            NodeDriver::Table { k, kappa, r } => {
                let row = &kappa[i * k..(i + 1) * k];
                Ok(row
                    .iter()
                    .zip(r)
                    .map(|(kv, rv)| kv + rv * z)
                    .fold(f64::INFINITY, f64::min))
            }
            NodeDriver::General(d) => general(d, i, grid, y, z),
        }
    }
}

#[inline(never)]
fn general(d: &Driver, i: usize, grid: &Grid, y: f64, z: f64) -> Result<f64, EvalError> {
    let x = grid.node(i);
    d.eval(&x[..grid.dim()], y, &[z])
}

/// A model frozen onto a grid: coefficients tabulated per node, plus the
/// monotonicity limit on the time step.
#[derive(Debug, Clone)]
pub(crate) struct Operator {
    grid: Grid,
    coef: Vec<NodeCoef>,
    f: NodeDriver,
    g: NodeDriver,
    shift: DriverShift,
    g_fun: GFunction,
    limit: f64,
    alpha: f64,
    mu: f64,
    lip_y: f64,
}

impl Operator {
    pub(crate) fn new(model: &ModelSpec, grid: &Grid) -> Result<Self, PdeError> {
        let n = model.n();
        if grid.dim() != n {
            return Err(PdeError::InvalidGrid(format!(
                "grid has {} axes, model has n = {n}",
                grid.dim()
            )));
        }
        let mut coef = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let x = &grid.node(i)[..n];
            let b = model.drift_at(x)?;
            let h = model.h_at(x)?;
            let s = model.sigma_at(x)?;
            let mut c = NodeCoef::default();
            for k in 0..n {
                c.b[k] = b[k];
                c.h[k] = h[k];
                c.s[k] = s[k];
            }
            coef.push(c);
        }
        let g_fun = *model.g_fun();
        let lo = g_fun.interval().sigma_lo_sq();
        let hi = g_fun.interval().sigma_hi_sq();
        let shift = *model.shift();
        let constants = model.constants();

        let mut lip_y = shift.y_dt.abs() + hi * shift.y_qv.abs();
        if model.f().uses_y() {
            lip_y += constants.lipschitz;
        }
        if model.g().uses_y() {
            lip_y += hi * constants.lipschitz;
        }
        let alpha2_eff = if model.drivers_use_z() {
            constants.alpha2 * hi.max(1.0)
        } else {
            0.0
        };

        let axes = grid.axes();
        let mut max_rate: f64 = 0.0;
        let mut alpha_seen: f64 = 0.0;
        for (i, c) in coef.iter().enumerate() {
            let mut diag = 0.0;
            let mut first = 0.0;
            let cross = if n == 2 {
                (c.s[0] * c.s[1]).abs() / (axes[0].h * axes[1].h)
            } else {
                0.0
            };
            for k in 0..n {
                let hk = axes[k].h;
                let akk = c.s[k] * c.s[k];
                diag += akk / (hk * hk);
                first += (hi * c.h[k].abs() + c.b[k].abs()) / hk;
                let edge = akk / (hk * hk) - cross;
                if edge < -1e-12 * akk / (hk * hk) {
                    return Err(PdeError::NonMonotone {
                        node: i,
                        detail: format!(
                            "cross diffusion {cross} exceeds axis-{k} weight {}",
                            akk / (hk * hk)
                        ),
                    });
                }
                if alpha2_eff > 0.0 && c.s[k] != 0.0 && lo * edge * hk < alpha2_eff * c.s[k].abs() {
                    return Err(PdeError::NonMonotone {
                        node: i,
                        detail: format!(
                            "gradient dependence of the drivers (alpha2 = {}) needs spacing <= {} on axis {k}",
                            constants.alpha2,
                            lo * c.s[k].abs() / alpha2_eff
                        ),
                    });
                }
            }
            let rate = hi * (diag - cross) + first + lip_y;
            max_rate = max_rate.max(rate);

            let x = &grid.node(i)[..n];
            let f0 = model.f_at(x, 0.0, &[0.0])?;
            let g0 = model.g_at(x, 0.0, &[0.0])?;
            alpha_seen = alpha_seen.max(f0.abs() + g_fun.scalar(2.0 * g0.abs()));
        }
        let limit = if max_rate > 0.0 {
            1.0 / max_rate
        } else {
            f64::INFINITY
        };
        Ok(Self {
            grid: grid.clone(),
            f: NodeDriver::build(model.f(), grid)?,
            g: NodeDriver::build(model.g(), grid)?,
            coef,
            shift,
            g_fun,
            limit,
            alpha: constants.alpha.max(alpha_seen),
            mu: constants.mu,
            lip_y,
        })
    }

    pub(crate) fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Largest monotone explicit time step.
    pub(crate) fn limit(&self) -> f64 {
        self.limit
    }

    /// Driver bound: the declared `alpha` or the largest
    /// `|f(x,0,0)| + 2G(|g(x,0,0)|)` seen on the grid, whichever is larger.
    pub(crate) fn alpha(&self) -> f64 {
        self.alpha
    }

    pub(crate) fn mu(&self) -> f64 {
        self.mu
    }

    /// Blow-up guard for a solve over `horizon` from data with sup norm
    /// `phi_sup`: ten times the a priori bound.
    pub(crate) fn guard(&self, phi_sup: f64, horizon: f64) -> f64 {
        let bound = if self.mu > 0.0 {
            self.alpha / self.mu + phi_sup
        } else {
            (phi_sup + self.alpha * horizon) * (self.lip_y * horizon).min(700.0).exp()
        };
        10.0 * bound
    }

    /// Value at per-axis index `(j0, j1)`, closing the stencil with ghost
    /// values one cell outside the box.
    #[inline]
    fn value_at(&self, u: &[f64], j: [isize; 2]) -> f64 {
        let axes = self.grid.axes();
        for k in 0..axes.len() {
            let last = axes[k].nodes as isize - 1;
            if j[k] < 0 || j[k] > last {
                let (edge, inner) = if j[k] < 0 { (0, 1) } else { (last, last - 1) };
                let mut je = j;
                je[k] = edge;
                let mut ji = j;
                ji[k] = inner;
                let ui = self.value_at(u, ji);
                return match self.grid.boundary() {
                    BoundaryPolicy::LinearExtrapolation => 2.0 * self.value_at(u, je) - ui,
                    BoundaryPolicy::ClampedGradient => ui,
                };
            }
        }
        u[self.grid.flat([j[0] as usize, j[1] as usize])]
    }

    /// The operator at node `i` of a one-dimensional grid, from the centre
    /// value and its two neighbours.
    #[inline(always)]
    fn kernel_1d(
        &self,
        i: usize,
        uc: f64,
        up: f64,
        dn: f64,
        ih: f64,
        stencil: Stencil,
    ) -> Result<(f64, f64, f64, f64), EvalError> {
        let c = &self.coef[i];
        let fwd = (up - uc) * ih;
        let bwd = (uc - dn) * ih;
        let cen = 0.5 * (fwd + bwd);
        let pick = |beta: f64| match stencil {
            Stencil::Upwind => {
                if beta > 0.0 {
                    fwd
                } else {
                    bwd
                }
            }
            Stencil::Centered => cen,
        };
        let z = c.s[0] * cen;
        let second = c.s[0] * c.s[0] * (fwd - bwd) * ih;
        let first_h = c.h[0] * pick(c.h[0]);
        let drift = c.b[0] * pick(c.b[0]);
        let s = &self.shift;
        let gval = self.g.eval(i, &self.grid, uc, z)? + s.y_qv * uc + s.c_qv;
        let hmat = second + 2.0 * first_h + 2.0 * gval;
        let fval = self.f.eval(i, &self.grid, uc, z)? + s.y_dt * uc + s.c_dt;
        let total = self.g_fun.scalar(hmat) + drift + fval;
        Ok((hmat, drift, fval, total))
    }

    /// The discrete operator at node `i`.
    pub(crate) fn pointwise(
        &self,
        u: &[f64],
        i: usize,
        stencil: Stencil,
    ) -> Result<(f64, f64, f64, f64), EvalError> {
        let axes = self.grid.axes();
        let n = axes.len();
        let c = &self.coef[i];
        let uc = u[i];
        let mut second = 0.0;
        let mut first_h = 0.0;
        let mut drift = 0.0;
        let mut z = 0.0;
        if n == 1 {
            let len = axes[0].nodes;
            let (up, dn) = if i > 0 && i + 1 < len {
                (u[i + 1], u[i - 1])
            } else {
                let j = i as isize;
                (self.value_at(u, [j + 1, 0]), self.value_at(u, [j - 1, 0]))
            };
            return self.kernel_1d(i, uc, up, dn, 1.0 / axes[0].h, stencil);
        } else {
            let jj = self.grid.split(i);
            let j = [jj[0] as isize, jj[1] as isize];
            let mut axis_sum = [0.0; 2];
            for k in 0..2 {
                let hk = axes[k].h;
                let mut jp = j;
                jp[k] += 1;
                let mut jm = j;
                jm[k] -= 1;
                let up = self.value_at(u, jp);
                let dn = self.value_at(u, jm);
                axis_sum[k] = up + dn;
                second += c.s[k] * c.s[k] * (up - 2.0 * uc + dn) / (hk * hk);
                let fwd = (up - uc) / hk;
                let bwd = (uc - dn) / hk;
                let cen = (up - dn) / (2.0 * hk);
                z += c.s[k] * cen;
                let pick = |beta: f64| match stencil {
                    Stencil::Upwind => {
                        if beta > 0.0 {
                            fwd
                        } else {
                            bwd
                        }
                    }
                    Stencil::Centered => cen,
                };
                first_h += c.h[k] * pick(c.h[k]);
                drift += c.b[k] * pick(c.b[k]);
            }
            let a01 = c.s[0] * c.s[1];
            if a01 != 0.0 {
                let hh = axes[0].h * axes[1].h;
                let rest = 2.0 * uc - axis_sum[0] - axis_sum[1];
                let uxy = if a01 > 0.0 {
                    let pp = self.value_at(u, [j[0] + 1, j[1] + 1]);
                    let mm = self.value_at(u, [j[0] - 1, j[1] - 1]);
                    (rest + pp + mm) / (2.0 * hh)
                } else {
                    let pm = self.value_at(u, [j[0] + 1, j[1] - 1]);
                    let mp = self.value_at(u, [j[0] - 1, j[1] + 1]);
                    -(rest + pm + mp) / (2.0 * hh)
                };
                second += 2.0 * a01 * uxy;
            }
        }
        let s = &self.shift;
        let gval = self.g.eval(i, &self.grid, uc, z)? + s.y_qv * uc + s.c_qv;
        let hmat = second + 2.0 * first_h + 2.0 * gval;
        let fval = self.f.eval(i, &self.grid, uc, z)? + s.y_dt * uc + s.c_dt;
        let total = self.g_fun.scalar(hmat) + drift + fval;
        Ok((hmat, drift, fval, total))
    }

    fn node_error(&self, i: usize, stage: &'static str) -> PdeError {
        PdeError::NonFinite {
            node: i,
            x: self.grid.node(i)[..self.grid.dim()].to_vec(),
            stage,
        }
    }

    /// Apply the operator at every node.
    pub(crate) fn apply(&self, u: &[f64], stencil: Stencil) -> Result<Vec<f64>, PdeError> {
        let mut out = vec![0.0; u.len()];
        for (i, o) in out.iter_mut().enumerate() {
            let (_, _, _, total) = self
                .pointwise(u, i, stencil)
                .map_err(|_| self.node_error(i, "operator"))?;
            if !total.is_finite() {
                return Err(self.node_error(i, "operator"));
            }
            *o = total;
        }
        Ok(out)
    }

    fn step_1d(&self, u: &[f64], out: &mut [f64], dt: f64) -> Result<f64, PdeError> {
        let len = u.len();
        let ih = 1.0 / self.grid.axes()[0].h;
        let lo_ghost = self.value_at(u, [-1, 0]);
        let hi_ghost = self.value_at(u, [len as isize, 0]);
        let mut top: f64 = 0.0;
        for i in 0..len {
            let up = if i + 1 < len { u[i + 1] } else { hi_ghost };
            let dn = if i > 0 { u[i - 1] } else { lo_ghost };
            let v = match self.kernel_1d(i, u[i], up, dn, ih, Stencil::Upwind) {
                Ok((_, _, _, total)) => u[i] + dt * total,
                Err(_) => f64::NAN,
            };
            if !v.is_finite() {
                return Err(self.node_error(i, "time step"));
            }
            out[i] = v;
            top = top.max(v.abs());
        }
        Ok(top)
    }

    /// One explicit Euler step `out = u + dt F[u]`; returns `max |out|`.
    pub(crate) fn step(&self, u: &[f64], out: &mut [f64], dt: f64) -> Result<f64, PdeError> {
        const PAR_MIN: usize = 4096;
        if self.grid.dim() == 1 && u.len() < PAR_MIN {
            return self.step_1d(u, out, dt);
        }
        let one = |i: usize, o: &mut f64| -> Result<f64, PdeError> {
            let (_, _, _, total) = self
                .pointwise(u, i, Stencil::Upwind)
                .map_err(|_| self.node_error(i, "time step"))?;
            let v = u[i] + dt * total;
            if !v.is_finite() {
                return Err(self.node_error(i, "time step"));
            }
            *o = v;
            Ok(v.abs())
        };
        if u.len() >= PAR_MIN {
            out.par_iter_mut()
                .enumerate()
                .map(|(i, o)| one(i, o))
                .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
        } else {
            let mut m: f64 = 0.0;
            for (i, o) in out.iter_mut().enumerate() {
                m = m.max(one(i, o)?);
            }
            Ok(m)
        }
    }
}

/// The scheme's pointwise operator for `m` at `node` of `u`.
pub fn assemble_operator(m: &ModelSpec, u: &Field, node: usize) -> Result<PointwiseOperator, PdeError> {
    if node >= u.grid().len() {
        return Err(PdeError::InvalidArgument(format!(
            "node {node} out of range for {} nodes",
            u.grid().len()
        )));
    }
    let op = Operator::new(m, u.grid())?;
    let (h, drift_term, driver_term, total) = op
        .pointwise(u.values(), node, Stencil::Upwind)
        .map_err(|_| op.node_error(node, "operator"))?;
    Ok(PointwiseOperator {
        h: vec![h],
        drift_term,
        driver_term,
        total,
    })
}

/// `z = sigma(x)^T Du(x)` for `d = 1`.
pub(crate) fn z_of(sigma: &[f64], grad: &[f64]) -> f64 {
    dot(sigma, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Constants;

    fn heat(lo: f64, hi: f64) -> ModelSpec {
        ModelSpec::builder()
            .b(["0"])
            .sigma(["1"])
            .f("0")
            .volatility(lo, hi)
            .build()
            .unwrap()
    }

    #[test]
    fn g_heat_picks_the_sign() {
        let g = Grid::uniform(-2.0, 2.0, 0.1).unwrap();
        let m = heat(1.0, 4.0);
        let convex = Field::from_fn(&g, |x| x[0] * x[0]);
        let p = assemble_operator(&m, &convex, 20).unwrap();
        assert!((p.h[0] - 2.0).abs() < 1e-10);
        assert!((p.total - 4.0).abs() < 1e-10);
        let concave = convex.map(|v| -v);
        let p = assemble_operator(&m, &concave, 20).unwrap();
        assert!((p.total + 1.0).abs() < 1e-10);
    }

    #[test]
    fn upwind_follows_drift_sign() {
        let m = ModelSpec::builder()
            .b(["-x"])
            .sigma(["0.5"])
            .f("0")
            .build()
            .unwrap();
        let g = Grid::uniform(-1.0, 1.0, 0.25).unwrap();
        let u = Field::from_fn(&g, |x| x[0].powi(3));
        // x = 0.5 (node 6): b < 0 so the backward difference is used.
        let p = assemble_operator(&m, &u, 6).unwrap();
        let bwd = (0.125 - 0.25f64.powi(3)) / 0.25;
        assert!((p.drift_term - (-0.5 * bwd)).abs() < 1e-12);
    }

    #[test]
    fn linear_extrapolation_kills_edge_curvature() {
        let g = Grid::uniform(0.0, 1.0, 0.25).unwrap();
        let m = heat(1.0, 1.0);
        let u = Field::from_fn(&g, |x| x[0] * x[0]);
        let op = Operator::new(&m, &g).unwrap();
        let (h0, ..) = op.pointwise(u.values(), 0, Stencil::Upwind).unwrap();
        assert_eq!(h0, 0.0);
        let clamped = Operator::new(&m, &g.clone().with_boundary(BoundaryPolicy::ClampedGradient)).unwrap();
        let (h0, ..) = clamped.pointwise(u.values(), 0, Stencil::Upwind).unwrap();
        assert!((h0 - 2.0 * 0.0625 / 0.0625).abs() < 1e-12);
    }

    #[test]
    fn cfl_limit_matches_formula() {
        let m = ModelSpec::builder()
            .b(["-x"])
            .sigma(["1"])
            .f("0")
            .volatility(1.0, 4.0)
            .build()
            .unwrap();
        let g = Grid::uniform(-2.0, 2.0, 0.1).unwrap();
        let op = Operator::new(&m, &g).unwrap();
        let rate = 4.0 / 0.01 + 2.0 / 0.1;
        assert!((op.limit() - 1.0 / rate).abs() < 1e-12);
    }

    #[test]
    fn coarse_grid_with_gradient_driver_is_rejected() {
        let m = ModelSpec::builder()
            .b(["0"])
            .sigma(["1"])
            .f("2*abs(z)")
            .volatility(1.0, 1.0)
            .constants(Constants {
                alpha2: 2.0,
                ..Constants::default()
            })
            .build()
            .unwrap();
        assert!(Operator::new(&m, &Grid::uniform(-2.0, 2.0, 0.25).unwrap()).is_ok());
        assert!(matches!(
            Operator::new(&m, &Grid::uniform(-2.0, 2.0, 1.0).unwrap()),
            Err(PdeError::NonMonotone { .. })
        ));
    }

    #[test]
    fn two_dim_cross_stencil_is_exact_on_quadratics() {
        let m = ModelSpec::builder()
            .n(2)
            .b(["0", "0"])
            .sigma(["1", "1"])
            .f("0")
            .volatility(1.0, 1.0)
            .build()
            .unwrap();
        let g = Grid::centered(2, 1.0, 0.25).unwrap();
        let u = Field::from_fn(&g, |x| x[0] * x[1] + x[0] * x[0]);
        let node = g.flat([4, 4]);
        let p = assemble_operator(&m, &u, node).unwrap();
        // sigma^T D^2u sigma = u_xx + 2 u_xy + u_yy = 2 + 2.
        assert!((p.h[0] - 4.0).abs() < 1e-10);
        let skew = ModelSpec::builder()
            .n(2)
            .b(["0", "0"])
            .sigma(["1", "0.5"])
            .f("0")
            .build()
            .unwrap();
        assert!(matches!(
            Operator::new(&skew, &g),
            Err(PdeError::NonMonotone { .. })
        ));
    }
}
