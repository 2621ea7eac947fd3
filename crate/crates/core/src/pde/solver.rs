use crate::error::PdeError;
use crate::models::ModelSpec;

use super::field::{Field, TimeField};
use super::grid::Grid;
use super::operator::{z_of, Operator, Stencil};

/// Number of snapshots kept by [`solve_parabolic`] besides the initial one.
const SNAPSHOTS: usize = 64;

fn same_axes(a: &Grid, b: &Grid) -> bool {
    a.axes() == b.axes()
}

/// Explicit marcher over a frozen operator.
pub(crate) struct Marcher {
    op: Operator,
    guard: f64,
    scratch: Vec<f64>,
}

impl Marcher {
    pub(crate) fn new(op: Operator, guard: f64) -> Self {
        Self {
            scratch: vec![0.0; op.grid().len()],
            op,
            guard,
        }
    }

    /// Advance `u` by `horizon`, calling `each` after every step with the
    /// elapsed time since the start of this call.
    pub(crate) fn advance(
        &mut self,
        u: &mut Vec<f64>,
        t0: f64,
        horizon: f64,
        mut each: impl FnMut(usize, f64, &[f64]),
    ) -> Result<(), PdeError> {
        let (steps, dt) = self.op.grid().steps_for(horizon, self.op.limit())?;
        for k in 0..steps {
            let top = self.op.step(u, &mut self.scratch, dt)?;
            std::mem::swap(u, &mut self.scratch);
            let t = (k + 1) as f64 * dt;
            if top > self.guard {
                return Err(PdeError::BlowUp {
                    t: t0 + t,
                    value: top,
                    guard: self.guard,
                });
            }
            each(k + 1, t, u);
        }
        Ok(())
    }
}

/// Solve `u_t = F[u]` forward in time-to-maturity from `u(0) = phi` up to
/// `horizon`. The returned snapshots always contain `t = 0` and
/// `t = horizon`.
pub fn solve_parabolic(
    m: &ModelSpec,
    phi: &Field,
    horizon: f64,
    grid: &Grid,
) -> Result<TimeField, PdeError> {
    if !same_axes(phi.grid(), grid) {
        return Err(PdeError::GridMismatch);
    }
    let op = Operator::new(m, grid)?;
    let (steps, _) = grid.steps_for(horizon, op.limit())?;
    let guard = op.guard(phi.sup_norm(), horizon);
    let mut march = Marcher::new(op, guard);
    let mut u = phi.values().to_vec();
    let mut out = TimeField::new();
    out.push(0.0, Field::new(grid.clone(), u.clone())?);
    let stride = (steps / SNAPSHOTS).max(1);
    let mut saved = Vec::new();
    march.advance(&mut u, 0.0, horizon, |k, t, v| {
        if k % stride == 0 && k != steps {
            saved.push((t, v.to_vec()));
        }
    })?;
    for (t, v) in saved {
        out.push(t, Field::new(grid.clone(), v)?);
    }
    if steps > 0 {
        out.push(horizon, Field::new(grid.clone(), u)?);
    }
    Ok(out)
}

/// `(Y_0, Z_0)` of the Markovian BSDE with terminal value `phi(X_T)` and
/// maturity `horizon`, for the forward process started at `x`.
pub fn solve_finite_bsde(
    m: &ModelSpec,
    phi: &Field,
    horizon: f64,
    x: &[f64],
    grid: &Grid,
) -> Result<(f64, Vec<f64>), PdeError> {
    if !grid.contains(x) {
        return Err(PdeError::OutsideDomain(x.to_vec()));
    }
    let tf = solve_parabolic(m, phi, horizon, grid)?;
    let u = tf.last();
    let y = u.interpolate(x)?;
    let grad = u.gradient(x)?;
    let sigma = m.sigma_at(x)?;
    Ok((y, vec![z_of(&sigma, &grad)]))
}

/// Stationary solution of the infinite-horizon problem (`mu > 0`), reached
/// by marching from zero. The first leg covers the horizon after which the
/// a priori contraction bound drops below `tol / 2`; unit legs follow until
/// the change over one unit of time is at most `tol / 2`.
pub fn solve_infinite(m: &ModelSpec, tol: f64, grid: &Grid) -> Result<Field, PdeError> {
    solve_infinite_from(m, tol, grid, None)
}

pub(crate) fn solve_infinite_from(
    m: &ModelSpec,
    tol: f64,
    grid: &Grid,
    init: Option<&Field>,
) -> Result<Field, PdeError> {
    if !(tol > 0.0) {
        return Err(PdeError::InvalidArgument(format!("tolerance {tol}")));
    }
    let op = Operator::new(m, grid)?;
    let mu = op.mu();
    if !(mu > 0.0) {
        return Err(PdeError::InvalidArgument(format!(
            "infinite-horizon solve needs mu > 0, got {mu}"
        )));
    }
    let alpha = op.alpha();
    let first = ((2.0 * alpha / (mu * tol)).ln() / mu).ceil().max(1.0);
    let max_total = 4.0 * first;
    let mut u = match init {
        Some(f) if same_axes(f.grid(), grid) => f.values().to_vec(),
        Some(_) => return Err(PdeError::GridMismatch),
        None => vec![0.0; grid.len()],
    };
    let phi_sup = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let guard = op.guard(phi_sup, first);
    let mut march = Marcher::new(op, guard);
    march.advance(&mut u, 0.0, first, |_, _, _| {})?;
    let mut t = first;
    let mut history = Vec::new();
    loop {
        let prev = u.clone();
        march.advance(&mut u, t, 1.0, |_, _, _| {})?;
        t += 1.0;
        let change = u
            .iter()
            .zip(&prev)
            .fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        history.push(change);
        if change <= 0.5 * tol {
            break;
        }
        if t >= max_total {
            return Err(PdeError::NonConvergence { horizon: t, history });
        }
    }
    Field::new(grid.clone(), u)
}

/// Discounted elliptic solution `v^eps`: the drivers gain `gamma1 eps v`
/// (in `f`) and `gamma2 eps v` (in `g`), which makes the problem strictly
/// monotone with rate `-(gamma1 + 2G(gamma2)) eps`.
pub fn solve_discounted(
    m: &ModelSpec,
    eps: f64,
    gamma1: f64,
    gamma2: f64,
    tol: f64,
    grid: &Grid,
) -> Result<Field, PdeError> {
    let margin = m.g_fun().dissipativity_margin(gamma1, &[gamma2])?;
    if margin >= 0.0 {
        return Err(PdeError::Infeasible { margin });
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(PdeError::InvalidArgument(format!("discount rate {eps}")));
    }
    solve_infinite(&m.discounted(gamma1, gamma2, eps), tol, grid)
}

/// Consistency residual of `u` in the PDE, measured with central first
/// differences. With `lambda = Some(l)` the ergodic terms `gamma1 l` and
/// `gamma2 l` are included.
pub fn residual(
    m: &ModelSpec,
    u: &Field,
    lambda: Option<f64>,
    gamma1: f64,
    gamma2: f64,
) -> Result<Field, PdeError> {
    let model = match lambda {
        Some(l) => m.with_lambda(gamma1, gamma2, l),
        None => m.clone(),
    };
    let op = Operator::new(&model, u.grid())?;
    Field::new(u.grid().clone(), op.apply(u.values(), Stencil::Centered)?)
}

/// Same as [`residual`] but with the scheme's own upwind stencil, so a
/// discrete stationary point has residual zero up to round-off.
pub fn scheme_residual(
    m: &ModelSpec,
    u: &Field,
    lambda: Option<f64>,
    gamma1: f64,
    gamma2: f64,
) -> Result<Field, PdeError> {
    let model = match lambda {
        Some(l) => m.with_lambda(gamma1, gamma2, l),
        None => m.clone(),
    };
    let op = Operator::new(&model, u.grid())?;
    Field::new(u.grid().clone(), op.apply(u.values(), Stencil::Upwind)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Constants;

    fn model(b: &str, f: &str, lo: f64, hi: f64, c: Constants) -> ModelSpec {
        ModelSpec::builder()
            .b([b])
            .sigma(["1"])
            .f(f)
            .volatility(lo, hi)
            .constants(c)
            .build()
            .unwrap()
    }

    #[test]
    fn convex_terminal_uses_upper_volatility() {
        // u(T, x) = x^2 + hi T exactly: the discrete Laplacian of x^2 is 2
        // in the interior; the edge is far enough that its influence on the
        // origin is below the tolerance.
        let g = Grid::uniform(-12.0, 12.0, 0.1).unwrap();
        let m = model("0", "0", 1.0, 4.0, Constants::default());
        let phi = Field::from_fn(&g, |x| x[0] * x[0]);
        let tf = solve_parabolic(&m, &phi, 1.0, &g).unwrap();
        let u = tf.last().interpolate(&[0.0]).unwrap();
        assert!((u - 4.0).abs() < 1e-6, "{u}");
        let concave = phi.map(|v| -v);
        let tf = solve_parabolic(&m, &concave, 1.0, &g).unwrap();
        assert!((tf.last().interpolate(&[0.0]).unwrap() + 1.0).abs() < 1e-6);
    }

    #[test]
    fn snapshots_bracket_the_horizon() {
        let g = Grid::uniform(-1.0, 1.0, 0.1).unwrap();
        let m = model("0", "1", 1.0, 1.0, Constants::default());
        let phi = Field::constant(&g, 0.0);
        let tf = solve_parabolic(&m, &phi, 0.5, &g).unwrap();
        assert_eq!(tf.times()[0], 0.0);
        assert_eq!(*tf.times().last().unwrap(), 0.5);
        assert!(tf.times().windows(2).all(|w| w[0] < w[1]));
        assert!((tf.last().values()[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn finite_bsde_linear_terminal() {
        let g = Grid::uniform(-8.0, 8.0, 0.05).unwrap();
        let m = model("0", "0", 1.0, 4.0, Constants::default());
        let phi = Field::from_fn(&g, |x| x[0]);
        let (y, z) = solve_finite_bsde(&m, &phi, 1.0, &[0.5], &g).unwrap();
        assert!((y - 0.5).abs() < 1e-9);
        assert!((z[0] - 1.0).abs() < 1e-9);
        assert!(matches!(
            solve_finite_bsde(&m, &phi, 1.0, &[9.0], &g),
            Err(PdeError::OutsideDomain(_))
        ));
    }

    #[test]
    fn infinite_horizon_constant_driver() {
        let g = Grid::uniform(-2.0, 2.0, 0.1).unwrap();
        let c = Constants {
            lipschitz: 2.0,
            alpha: 3.0,
            mu: 2.0,
            ..Constants::default()
        };
        let m = model("-x", "3 - 2*y", 1.0, 1.0, c);
        let u = solve_infinite(&m, 1e-6, &g).unwrap();
        for v in u.values() {
            assert!((v - 1.5).abs() <= 1e-6);
        }
    }

    #[test]
    fn discounted_requires_negative_margin() {
        let g = Grid::uniform(-2.0, 2.0, 0.1).unwrap();
        let m = model("-x", "1", 1.0, 4.0, Constants::default());
        assert!(matches!(
            solve_discounted(&m, 0.5, -1.0, 1.0, 1e-4, &g),
            Err(PdeError::Infeasible { .. })
        ));
        assert!(solve_discounted(&m, 0.0, -1.0, 0.0, 1e-4, &g).is_err());
        let v = solve_discounted(&m, 0.5, -1.0, 0.0, 1e-6, &g).unwrap();
        assert!((v.values()[20] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn residual_of_constant_driver() {
        let g = Grid::uniform(-2.0, 2.0, 0.1).unwrap();
        let m = model("-x", "0.7", 1.0, 4.0, Constants::default());
        let zero = Field::constant(&g, 0.0);
        let r = residual(&m, &zero, Some(0.0), -1.0, 0.0).unwrap();
        assert!(r.values().iter().all(|&v| v == 0.7));
        let r = residual(&m, &zero, Some(0.7), -1.0, 0.0).unwrap();
        assert!(r.sup_norm() <= 1e-12);
    }

    #[test]
    fn blow_up_is_reported() {
        let g = Grid::uniform(-1.0, 1.0, 0.1).unwrap();
        let c = Constants {
            alpha: 1e-3,
            mu: 1.0,
            ..Constants::default()
        };
        // Declared mu contradicts the explosive driver.
        let m = model("0", "10*y + 1e-3", 1.0, 1.0, c);
        assert!(matches!(
            solve_infinite(&m, 1e-6, &g),
            Err(PdeError::BlowUp { .. })
        ));
    }
}
