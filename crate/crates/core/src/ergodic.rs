//! The ergodic pair `(v, lambda)` of
//!
//! ```text
//! G(sigma^T D^2v sigma + 2 <Dv, h> + 2 g + 2 gamma2 lambda) + <b, Dv> + f + gamma1 lambda = 0
//! ```
//!
//! obtained by vanishing discount and by the large-time behaviour of the
//! parabolic problem, plus the diagnostics that tie the two together.

use std::fmt::{self, Write as _};

use rayon::prelude::*;

use crate::error::{ErgodicError, PdeError};
use crate::mc_oracle::{simulate_controlled, VolatilityControl};
use crate::models::ModelSpec;
use crate::pde::{
    residual, solve_discounted, Field, Grid, Marcher, Operator, Stencil,
};

/// Interior band used for residual norms: nodes at least this fraction of
/// the box away from every edge.
pub const INTERIOR: f64 = 0.25;

/// An ergodic problem: a model with `y`-free drivers and the weights
/// `gamma1`, `gamma2` of the ergodic constant.
#[derive(Debug, Clone)]
pub struct ErgodicProblem {
    model: ModelSpec,
    gamma1: f64,
    gamma2: f64,
}

impl ErgodicProblem {
    pub fn new(model: ModelSpec, gamma1: f64, gamma2: f64) -> Result<Self, ErgodicError> {
        if model.f().uses_y() || model.g().uses_y() {
            return Err(ErgodicError::InvalidArgument(
                "ergodic drivers must not depend on y".into(),
            ));
        }
        let margin = model.g_fun().dissipativity_margin(gamma1, &[gamma2])?;
        if margin >= 0.0 {
            return Err(ErgodicError::Infeasible { margin });
        }
        Ok(Self {
            model,
            gamma1,
            gamma2,
        })
    }

    /// The usual weighting `gamma1 = -1, gamma2 = 0`.
    pub fn standard(model: ModelSpec) -> Result<Self, ErgodicError> {
        Self::new(model, -1.0, 0.0)
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    pub fn gamma2(&self) -> f64 {
        self.gamma2
    }

    /// `gamma1 + 2G(gamma2) < 0`.
    pub fn margin(&self) -> f64 {
        self.gamma1 + 2.0 * self.model.g_fun().scalar(self.gamma2)
    }

    fn is_standard(&self) -> bool {
        self.gamma1 == -1.0 && self.gamma2 == 0.0
    }
}

/// Strictly decreasing discount rates.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountSchedule {
    eps: Vec<f64>,
}

impl DiscountSchedule {
    pub fn new(eps: Vec<f64>) -> Result<Self, ErgodicError> {
        if eps.len() < 3 {
            return Err(ErgodicError::InvalidSchedule(format!(
                "{} entries, need at least 3",
                eps.len()
            )));
        }
        if eps.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(ErgodicError::InvalidSchedule(format!("non-positive entry in {eps:?}")));
        }
        if eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(ErgodicError::InvalidSchedule(format!("not strictly decreasing: {eps:?}")));
        }
        Ok(Self { eps })
    }

    /// `eps0 r^k` for `k < count`.
    pub fn geometric(eps0: f64, ratio: f64, count: usize) -> Result<Self, ErgodicError> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(ErgodicError::InvalidSchedule(format!("ratio {ratio}")));
        }
        Self::new((0..count).map(|k| eps0 * ratio.powi(k as i32)).collect())
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }
}

impl Default for DiscountSchedule {
    fn default() -> Self {
        Self::geometric(0.4, 0.5, 6).expect("valid default schedule")
    }
}

/// Diagnostics of one discounted solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountedRecord {
    pub eps: f64,
    /// `v^eps(0)`.
    pub v0: f64,
    /// `sup |v^eps|`.
    pub sup: f64,
    /// Numeric Lipschitz constant of `v^eps`.
    pub lipschitz: f64,
}

#[derive(Debug, Clone)]
pub struct ErgodicSolution {
    pub lambda: f64,
    /// Normalized so that `v(0) = 0`.
    pub v: Field,
    /// `(eps, eps v^eps(0))`.
    pub lambda_history: Vec<(f64, f64)>,
    /// Largest difference quotient of `v` between neighbouring nodes.
    pub lipschitz_estimate: f64,
    /// Interior sup norm of the consistency residual of `(v, lambda)`.
    pub residual_norm: f64,
    pub discounted: Vec<DiscountedRecord>,
}

impl ErgodicSolution {
    /// Rows `eps,eps_v0,v0,sup_v,lipschitz`.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("eps,eps_v0,v0,sup_v,lipschitz\n");
        for r in &self.discounted {
            let _ = writeln!(s, "{},{},{},{},{}", r.eps, r.eps * r.v0, r.v0, r.sup, r.lipschitz);
        }
        s
    }
}

/// Largest `|u(x') - u(x)| / |x' - x|` over neighbouring nodes.
pub fn lipschitz_estimate(u: &Field) -> f64 {
    let g = u.grid();
    let v = u.values();
    let mut best: f64 = 0.0;
    for i in 0..g.len() {
        let j = g.split(i);
        for (k, a) in g.axes().iter().enumerate() {
            if j[k] + 1 < a.nodes {
                let mut jn = j;
                jn[k] += 1;
                best = best.max((v[g.flat(jn)] - v[i]).abs() / a.h);
            }
        }
    }
    best
}

/// Intercept at zero of the least-squares line through `points`.
fn intercept(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return my;
    }
    my - (sxy / sxx) * mx
}

/// Successive differences of the history must contract, or sit at the noise
/// level `floor`, over the last three entries.
fn check_cauchy(history: &[(f64, f64)], floor: f64) -> Result<(), ErgodicError> {
    let tail = &history[history.len() - 3..];
    let d1 = (tail[1].1 - tail[0].1).abs();
    let d2 = (tail[2].1 - tail[1].1).abs();
    if d2 > d1.max(floor) * (1.0 + 1e-9) {
        return Err(ErgodicError::NonCauchy {
            history: history.to_vec(),
        });
    }
    Ok(())
}

fn origin_value(u: &Field) -> Result<f64, ErgodicError> {
    let zero = vec![0.0; u.grid().dim()];
    u.interpolate(&zero).map_err(ErgodicError::from)
}

/// Ergodic constant by vanishing discount: `eps v^eps(0)` for every `eps`
/// in the schedule, extrapolated to `eps = 0` by a straight line through the
/// last three points. `tol` is the accuracy asked of each `eps v^eps(0)`.
pub fn vanishing_discount(
    p: &ErgodicProblem,
    sched: &DiscountSchedule,
    grid: &Grid,
    tol: f64,
) -> Result<ErgodicSolution, ErgodicError> {
    if !(tol > 0.0) {
        return Err(ErgodicError::InvalidArgument(format!("tolerance {tol}")));
    }
    let zero = vec![0.0; grid.dim()];
    if !grid.contains(&zero) {
        return Err(ErgodicError::InvalidArgument(
            "the grid must contain the origin".into(),
        ));
    }
    let fields: Vec<Field> = sched
        .eps()
        .par_iter()
        .map(|&eps| solve_discounted(&p.model, eps, p.gamma1, p.gamma2, tol / eps, grid))
        .collect::<Result<_, _>>()?;
    let mut discounted = Vec::with_capacity(fields.len());
    let mut history = Vec::with_capacity(fields.len());
    for (&eps, f) in sched.eps().iter().zip(&fields) {
        let v0 = origin_value(f)?;
        history.push((eps, eps * v0));
        discounted.push(DiscountedRecord {
            eps,
            v0,
            sup: f.sup_norm(),
            lipschitz: lipschitz_estimate(f),
        });
    }
    check_cauchy(&history, 10.0 * tol)?;
    let lambda = intercept(&history[history.len() - 3..]);
    let last = fields.last().expect("schedule has entries");
    let c = origin_value(last)?;
    let v = last.map(|u| u - c);
    let residual_norm = residual(&p.model, &v, Some(lambda), p.gamma1, p.gamma2)?.interior_sup(INTERIOR);
    Ok(ErgodicSolution {
        lambda,
        lipschitz_estimate: lipschitz_estimate(&v),
        v,
        lambda_history: history,
        residual_norm,
        discounted,
    })
}

/// Long-run drift of the parabolic problem with the ergodic terms for
/// `lambda` included, marched from `start` until the increment over one
/// unit of time is spatially constant within `tol`. Returns the increment
/// at the origin and the relaxed profile.
fn drift_rate(
    p: &ErgodicProblem,
    lambda: f64,
    start: &Field,
    tol: f64,
    max_horizon: f64,
) -> Result<(f64, Vec<f64>), ErgodicError> {
    let model = p.model.with_lambda(p.gamma1, p.gamma2, lambda);
    let grid = start.grid();
    let op = Operator::new(&model, grid)?;
    let guard = op.guard(start.sup_norm(), max_horizon) + 1e6;
    let mut march = Marcher::new(op, guard);
    let origin = grid.nearest(&vec![0.0; grid.dim()]);
    let mut u = start.values().to_vec();
    let mut t = 0.0;
    let mut history = Vec::new();
    while t < max_horizon {
        let prev = u.clone();
        march.advance(&mut u, t, 1.0, |_, _, _| {})?;
        t += 1.0;
        let (lo, hi) = u
            .iter()
            .zip(&prev)
            .map(|(a, b)| a - b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), d| (l.min(d), h.max(d)));
        history.push(hi - lo);
        if hi - lo <= tol {
            let rate = u[origin] - prev[origin];
            let c = u[origin];
            return Ok((rate, u.into_iter().map(|x| x - c).collect()));
        }
    }
    Err(PdeError::NonConvergence {
        horizon: t,
        history,
    }
    .into())
}

/// Relax `(v, lambda)` onto the stationary pair of the discrete scheme by
/// marching the parabolic problem from `v` and correcting `lambda` until the
/// long-run drift vanishes. The resulting `v` satisfies the scheme's own
/// equations up to `tol`, so its consistency residual measures the
/// discretization alone.
pub fn relax(
    p: &ErgodicProblem,
    sol: &ErgodicSolution,
    tol: f64,
) -> Result<ErgodicSolution, ErgodicError> {
    let eta = p.model.constants().eta;
    let max_horizon = if eta > 0.0 { 400.0 / eta } else { 400.0 };
    let mut lambda = sol.lambda;
    let mut shape = sol.v.clone();
    let (mut rate, prof) = drift_rate(p, lambda, &shape, tol, max_horizon)?;
    shape = Field::new(shape.grid().clone(), prof)?;
    // The drift is decreasing in lambda with slope between the two extreme
    // weightings; the first step uses the feasibility margin as slope.
    let mut slope = p.margin();
    for _ in 0..30 {
        if rate.abs() <= tol {
            break;
        }
        let next = lambda - rate / slope;
        let (r, prof) = drift_rate(p, next, &shape, tol, max_horizon)?;
        shape = Field::new(shape.grid().clone(), prof)?;
        if next != lambda && r != rate {
            slope = (r - rate) / (next - lambda);
        }
        lambda = next;
        rate = r;
    }
    if rate.abs() > tol {
        return Err(ErgodicError::NonCauchy {
            history: vec![(lambda, rate)],
        });
    }
    let c = origin_value(&shape)?;
    let v = shape.map(|u| u - c);
    let residual_norm = residual(&p.model, &v, Some(lambda), p.gamma1, p.gamma2)?.interior_sup(INTERIOR);
    Ok(ErgodicSolution {
        lambda,
        lipschitz_estimate: lipschitz_estimate(&v),
        v,
        lambda_history: sol.lambda_history.clone(),
        residual_norm,
        discounted: sol.discounted.clone(),
    })
}

/// The constant making the interior mean of the scheme residual of `v`
/// vanish.
pub fn implied_lambda(p: &ErgodicProblem, v: &Field) -> Result<f64, ErgodicError> {
    let g = v.grid();
    let interior: Vec<usize> = (0..g.len()).filter(|&i| g.is_interior(i, INTERIOR)).collect();
    let mean = |lambda: f64| -> Result<f64, ErgodicError> {
        let m = p.model.with_lambda(p.gamma1, p.gamma2, lambda);
        let op = Operator::new(&m, g)?;
        let r = op.apply(v.values(), Stencil::Upwind)?;
        Ok(interior.iter().map(|&i| r[i]).sum::<f64>() / interior.len() as f64)
    };
    // The mean residual decreases in lambda at least at rate |margin|.
    let r0 = mean(0.0)?;
    let span = r0.abs() / -p.margin() + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * (1.0 + mid.abs()) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One horizon of a large-time run.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonRow {
    pub horizon: f64,
    pub u: f64,
    /// `|u(T,x)/T - lambda_est|`.
    pub gap: f64,
    /// `T |u(T,x)/T - lambda_est| / (1 + |x|)`.
    pub c_est: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LargeTimeReport {
    pub x: Vec<f64>,
    pub rows: Vec<HorizonRow>,
    /// Difference quotients between consecutive horizons.
    pub slopes: Vec<f64>,
    /// Whether `T |u/T - lambda|` stays bounded by its first value (with
    /// 25% slack), i.e. the gap decays like `1/T`.
    pub bound_holds: bool,
}

impl fmt::Display for LargeTimeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8} {:>14} {:>12} {:>10}", "T", "u(T,x)", "|u/T-l|", "C_est")?;
        for r in &self.rows {
            writeln!(f, "{:>8} {:>14.8} {:>12.3e} {:>10.5}", r.horizon, r.u, r.gap, r.c_est)?;
        }
        write!(f, "1/T decay: {}", if self.bound_holds { "holds" } else { "violated" })
    }
}

fn march_horizons(
    p: &ErgodicProblem,
    phi: &Field,
    t_list: &[f64],
) -> Result<Vec<Field>, ErgodicError> {
    if t_list.len() < 2 || t_list.windows(2).any(|w| w[1] <= w[0]) || t_list[0] <= 0.0 {
        return Err(ErgodicError::InvalidArgument(format!(
            "horizons must be positive and increasing, at least two: {t_list:?}"
        )));
    }
    let grid = phi.grid();
    let op = Operator::new(&p.model, grid)?;
    let t_max = *t_list.last().expect("non-empty");
    let guard = op.guard(phi.sup_norm(), t_max);
    let mut march = Marcher::new(op, guard);
    let mut u = phi.values().to_vec();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(t_list.len());
    for &big_t in t_list {
        march.advance(&mut u, t, big_t - t, |_, _, _| {})?;
        t = big_t;
        out.push(Field::new(grid.clone(), u.clone())?);
    }
    Ok(out)
}

fn horizon_report(
    x: &[f64],
    t_list: &[f64],
    values: &[f64],
) -> Result<(f64, LargeTimeReport), ErgodicError> {
    let k = t_list.len();
    let slopes: Vec<f64> = (1..k)
        .map(|i| (values[i] - values[i - 1]) / (t_list[i] - t_list[i - 1]))
        .collect();
    let lambda = *slopes.last().expect("two horizons");
    let norm = 1.0 + x.iter().map(|c| c * c).sum::<f64>().sqrt();
    let rows: Vec<HorizonRow> = t_list
        .iter()
        .zip(values)
        .map(|(&t, &u)| {
            let gap = (u / t - lambda).abs();
            HorizonRow {
                horizon: t,
                u,
                gap,
                c_est: t * gap / norm,
            }
        })
        .collect();
    let first = rows[0].c_est;
    let bound_holds = rows
        .iter()
        .all(|r| r.c_est <= 1.25 * first + 1e-9 * (1.0 + r.horizon));
    if slopes.len() >= 2 {
        let a = slopes[slopes.len() - 2];
        if (lambda - a).abs() > 0.02 * (1.0 + lambda.abs()) {
            return Err(ErgodicError::HorizonsTooShort {
                history: t_list[1..].iter().copied().zip(slopes.iter().copied()).collect(),
            });
        }
    }
    Ok((
        lambda,
        LargeTimeReport {
            x: x.to_vec(),
            rows,
            slopes,
            bound_holds,
        },
    ))
}

/// Ergodic constant from the slope of `u(T, x)` over the two largest
/// horizons of `t_list`, with `u` the parabolic solution from `phi`.
pub fn large_time(
    p: &ErgodicProblem,
    phi: &Field,
    t_list: &[f64],
    x: &[f64],
    grid: &Grid,
) -> Result<(f64, LargeTimeReport), ErgodicError> {
    if !p.is_standard() {
        return Err(ErgodicError::InvalidArgument(
            "large-time extraction needs gamma1 = -1, gamma2 = 0".into(),
        ));
    }
    if phi.grid().axes() != grid.axes() {
        return Err(PdeError::GridMismatch.into());
    }
    if !grid.contains(x) {
        return Err(PdeError::OutsideDomain(x.to_vec()).into());
    }
    let phi = Field::new(grid.clone(), phi.values().to_vec())?;
    let fields = march_horizons(p, &phi, t_list)?;
    let values = fields
        .iter()
        .map(|f| f.interpolate(x))
        .collect::<Result<Vec<_>, _>>()?;
    horizon_report(x, t_list, &values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessReport {
    /// `(x, lambda_est)` from the large-time slope at each point.
    pub estimates: Vec<(f64, f64)>,
    pub spread: f64,
    pub max_deviation: f64,
    pub agree: bool,
    /// `sup |residual(v + c) - residual(v)|` for `c = 5`.
    pub shift_defect: f64,
}

/// Large-time slopes at every point of `x_list` (one march), compared with
/// `sol.lambda`; and the invariance of the residual under `v -> v + 5`.
pub fn lambda_uniqueness_check(
    p: &ErgodicProblem,
    sol: &ErgodicSolution,
    x_list: &[f64],
    t_list: &[f64],
    tol: f64,
) -> Result<UniquenessReport, ErgodicError> {
    let grid = sol.v.grid();
    let phi = Field::constant(grid, 0.0);
    let fields = march_horizons(p, &phi, t_list)?;
    let mut estimates = Vec::with_capacity(x_list.len());
    for &x in x_list {
        let values = fields
            .iter()
            .map(|f| f.interpolate(&[x]))
            .collect::<Result<Vec<_>, _>>()?;
        let (l, _) = horizon_report(&[x], t_list, &values)?;
        estimates.push((x, l));
    }
    let lo = estimates.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    let hi = estimates.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    let max_deviation = estimates
        .iter()
        .map(|e| (e.1 - sol.lambda).abs())
        .fold(0.0, f64::max);
    let r = residual(&p.model, &sol.v, Some(sol.lambda), p.gamma1, p.gamma2)?;
    let shifted = sol.v.map(|u| u + 5.0);
    let rs = residual(&p.model, &shifted, Some(sol.lambda), p.gamma1, p.gamma2)?;
    Ok(UniquenessReport {
        spread: hi - lo,
        agree: max_deviation <= tol,
        max_deviation,
        shift_defect: r.sup_distance(&rs),
        estimates,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbelianTauberianReport {
    /// `(eps, eps v^eps(x))`.
    pub discounted: Vec<(f64, f64)>,
    pub discounted_limit: f64,
    pub time_average: f64,
    pub lambda: f64,
    pub agree: bool,
}

/// Compare the discounted limit `lim eps v^eps(x)` with the long-run time
/// average `lim u(T,x)/T`, and both with `lambda`, within relative `tol`.
#[allow(clippy::too_many_arguments)]
pub fn abelian_tauberian_check(
    p: &ErgodicProblem,
    lambda: f64,
    x: &[f64],
    eps_list: &DiscountSchedule,
    t_list: &[f64],
    grid: &Grid,
    tol: f64,
) -> Result<AbelianTauberianReport, ErgodicError> {
    if p.model.drivers_use_z() {
        return Err(ErgodicError::InvalidArgument(
            "the Abelian-Tauberian comparison needs z-free drivers".into(),
        ));
    }
    let solve_tol = 1e-3 * tol * (1.0 + lambda.abs());
    let fields: Vec<Field> = eps_list
        .eps()
        .par_iter()
        .map(|&e| solve_discounted(&p.model, e, p.gamma1, p.gamma2, solve_tol / e, grid))
        .collect::<Result<_, _>>()?;
    let mut discounted = Vec::with_capacity(fields.len());
    for (&e, f) in eps_list.eps().iter().zip(&fields) {
        discounted.push((e, e * f.interpolate(x)?));
    }
    let discounted_limit = intercept(&discounted[discounted.len() - 3..]);
    let (time_average, _) = large_time(p, &Field::constant(grid, 0.0), t_list, x, grid)?;
    let scale = 1.0 + lambda.abs();
    let agree = (discounted_limit - lambda).abs() <= tol * scale
        && (time_average - lambda).abs() <= tol * scale;
    Ok(AbelianTauberianReport {
        discounted,
        discounted_limit,
        time_average,
        lambda,
        agree,
    })
}

/// Volatility chosen node by node as the maximizer of `G(H)` for the ergodic
/// solution: the discrete worst case.
#[derive(Debug, Clone)]
pub struct WorstCaseVolatility {
    levels: Field,
    horizon: f64,
    steps: usize,
}

impl WorstCaseVolatility {
    pub fn new(
        p: &ErgodicProblem,
        sol: &ErgodicSolution,
        horizon: f64,
        steps: usize,
    ) -> Result<Self, ErgodicError> {
        if !(horizon > 0.0) || steps == 0 {
            return Err(ErgodicError::InvalidArgument(format!(
                "horizon {horizon}, steps {steps}"
            )));
        }
        let m = p.model.with_lambda(p.gamma1, p.gamma2, sol.lambda);
        let grid = sol.v.grid();
        let op = Operator::new(&m, grid)?;
        let g = p.model.g_fun();
        let mut levels = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let (h, ..) = op
                .pointwise(sol.v.values(), i, Stencil::Centered)
                .map_err(|_| PdeError::NonFinite {
                    node: i,
                    x: grid.node(i)[..grid.dim()].to_vec(),
                    stage: "worst-case volatility",
                })?;
            levels.push(g.argmax(h));
        }
        Ok(Self {
            levels: Field::new(grid.clone(), levels)?,
            horizon,
            steps,
        })
    }

    pub fn levels(&self) -> &Field {
        &self.levels
    }
}

impl VolatilityControl for WorstCaseVolatility {
    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn level(&self, _step: usize, x: &[f64]) -> f64 {
        self.levels.values()[self.levels.grid().nearest(x)]
    }
}

/// `Y`, `Z` and cumulative `K` along one simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdePathRecord {
    pub times: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub k: Vec<f64>,
    /// `int (f + gamma1 lambda) dt` and `int (g + gamma2 lambda) d<B>`.
    pub driver_integrals: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EbsdeSummary {
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    /// Mean and standard error of `K_T`.
    pub mean_k: f64,
    pub std_err_k: f64,
    /// `|mean K_T| / T`.
    pub closure_error: f64,
    /// Fraction of paths whose cumulative `K` never rises more than `tol`
    /// above its running minimum.
    pub decreasing_fraction: f64,
    /// Mean cumulative `K` at every time step.
    pub mean_k_path: Vec<f64>,
    pub samples: Vec<BsdePathRecord>,
}

/// Run the ergodic BSDE identity along simulated paths:
/// `dK = Y' - Y + (f + gamma1 lambda) dt + (g + gamma2 lambda) v dt - Z dB`
/// with `Y = v(X)` and `Z = sigma(X) Dv(X)`.
#[allow(clippy::too_many_arguments)]
pub fn ebsde_verify(
    p: &ErgodicProblem,
    sol: &ErgodicSolution,
    control: &dyn VolatilityControl,
    x0: &[f64],
    n_paths: usize,
    seed: u64,
    tol: f64,
    keep: usize,
) -> Result<EbsdeSummary, ErgodicError> {
    if n_paths < 2 {
        return Err(ErgodicError::InvalidArgument(format!("{n_paths} paths")));
    }
    let m = &p.model;
    let bundle = simulate_controlled(m, control, x0, n_paths, seed)?;
    let steps = bundle.steps();
    let dt = bundle.dt();
    let lambda = sol.lambda;
    let v = &sol.v;
    let grid = v.grid();
    let clamp = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(grid.axes())
            .map(|(c, a)| c.clamp(a.lo, a.hi()))
            .collect()
    };
    let per_path: Vec<(Vec<f64>, Option<BsdePathRecord>, bool)> = (0..n_paths)
        .into_par_iter()
        .map(|path| -> Result<_, ErgodicError> {
            let mut k_cum = Vec::with_capacity(steps + 1);
            k_cum.push(0.0);
            let mut rec = (path < keep).then(|| BsdePathRecord {
                times: bundle.times().to_vec(),
                y: Vec::with_capacity(steps + 1),
                z: Vec::with_capacity(steps + 1),
                k: Vec::new(),
                driver_integrals: (0.0, 0.0),
            });
            let mut kk = 0.0;
            let mut run_min: f64 = 0.0;
            let mut rise: f64 = 0.0;
            let mut integrals = (0.0, 0.0);
            let mut x = clamp(bundle.state(path, 0));
            let mut y = v.interpolate(&x)?;
            for s in 0..steps {
                let sigma = m.sigma_at(&x)?;
                let grad = v.gradient(&x)?;
                let z: f64 = sigma.iter().zip(&grad).map(|(a, b)| a * b).sum();
                let f = m.f_at(&x, y, &[z])? + p.gamma1 * lambda;
                let g = m.g_at(&x, y, &[z])? + p.gamma2 * lambda;
                let xn = clamp(bundle.state(path, s + 1));
                let yn = v.interpolate(&xn)?;
                let bracket = bundle.bracket(path, s);
                let dk = yn - y + f * dt + g * bracket - z * bundle.increment(path, s);
                integrals.0 += f * dt;
                integrals.1 += g * bracket;
                kk += dk;
                run_min = run_min.min(kk);
                rise = rise.max(kk - run_min);
                k_cum.push(kk);
                if let Some(r) = rec.as_mut() {
                    r.y.push(y);
                    r.z.push(z);
                }
                x = xn;
                y = yn;
            }
            if let Some(r) = rec.as_mut() {
                r.y.push(y);
                r.z.push(r.z.last().copied().unwrap_or(0.0));
                r.k = k_cum.clone();
                r.driver_integrals = integrals;
            }
            Ok((k_cum, rec, rise <= tol))
        })
        .collect::<Result<_, _>>()?;
    let nf = n_paths as f64;
    let mut mean_k_path = vec![0.0; steps + 1];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut decreasing = 0usize;
    let mut samples = Vec::new();
    for (k, rec, dec) in per_path {
        for (acc, v) in mean_k_path.iter_mut().zip(&k) {
            *acc += v / nf;
        }
        let kt = k[steps];
        sum += kt;
        sum_sq += kt * kt;
        decreasing += usize::from(dec);
        if let Some(r) = rec {
            samples.push(r);
        }
    }
    let mean_k = sum / nf;
    let var = ((sum_sq - nf * mean_k * mean_k) / (nf - 1.0)).max(0.0);
    let horizon = control.horizon();
    Ok(EbsdeSummary {
        horizon,
        dt,
        n_paths,
        mean_k,
        std_err_k: (var / nf).sqrt(),
        closure_error: mean_k.abs() / horizon,
        decreasing_fraction: decreasing as f64 / nf,
        mean_k_path,
        samples,
    })
}

impl EbsdeSummary {
    /// Rows `t,mean_k`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,mean_k\n");
        for (i, k) in self.mean_k_path.iter().enumerate() {
            let _ = writeln!(s, "{},{k}", i as f64 * self.dt);
        }
        s
    }
}
