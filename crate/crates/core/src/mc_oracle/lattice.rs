//! Recombining-lattice dynamic programming for the adapted worst case.
//!
//! Each node moves to three lattice points `c - k, c, c + k` around the
//! one-step mean, with probabilities matching the one-step mean and variance
//! exactly. The jump `k` is the smallest that keeps all three probabilities
//! nonnegative, so a wide volatility interval does not force a tiny time
//! step. Beyond the lattice, values are extended linearly from the two edge
//! nodes.

use rayon::prelude::*;

use crate::error::OracleError;
use crate::expr::{Expression, Vars};
use crate::gcalculus::UncertaintyInterval;
use crate::models::ModelSpec;
use crate::pde::{Field, Grid};

use super::paths::coefficients;

const MAX_JUMP: usize = 64;
const PAR_MIN: usize = 2048;

/// Lattice geometry and time step.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeParams {
    pub x_lo: f64,
    pub x_hi: f64,
    pub h: f64,
    /// Time step; `None` picks `h^2 / (2 lo max sigma^2)`, which keeps the
    /// lowest level on the nearest-neighbour stencil.
    pub dt: Option<f64>,
    /// Volatility levels maximized over; empty means `{lo, midpoint, hi}`.
    pub levels: Vec<f64>,
}

impl LatticeParams {
    pub fn new(x_lo: f64, x_hi: f64, h: f64) -> Self {
        Self {
            x_lo,
            x_hi,
            h,
            dt: None,
            levels: Vec::new(),
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }

    /// The output grid of [`lattice_value`].
    pub fn grid(&self) -> Result<Grid, OracleError> {
        Grid::uniform(self.x_lo, self.x_hi, self.h)
            .map_err(|e| OracleError::InvalidArgument(e.to_string()))
    }
}

/// One branch of a node's stencil.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Branch {
    pub p: f64,
    /// Displacement of the target point from the starting node.
    pub dx: f64,
    /// Displacement of the target point from the one-step mean.
    pub dev: f64,
    /// Continuation value at the target point.
    pub w: f64,
}

/// A one-dimensional lattice with tabulated coefficients.
pub(crate) struct Lattice {
    pub xs: Vec<f64>,
    x_lo: f64,
    h: f64,
    pub dt: f64,
    pub steps: usize,
    pub levels: Vec<f64>,
    drift: Vec<f64>,
    hq: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Lattice {
    /// Tabulate `b (+ extra)`, `h` and `sigma` on the lattice.
    pub fn new(
        m: &ModelSpec,
        interval: &UncertaintyInterval,
        params: &LatticeParams,
        horizon: f64,
        extra_drift: Option<&dyn Fn(&[f64], f64) -> f64>,
    ) -> Result<Self, OracleError> {
        if m.n() != 1 {
            return Err(OracleError::InvalidArgument(format!(
                "the lattice is one-dimensional, model has n = {}",
                m.n()
            )));
        }
        let grid = params.grid()?;
        let xs: Vec<f64> = (0..grid.len()).map(|i| grid.node(i)[0]).collect();
        let mut drift = Vec::with_capacity(xs.len());
        let mut hq = Vec::with_capacity(xs.len());
        let mut sigma = Vec::with_capacity(xs.len());
        for (i, &x) in xs.iter().enumerate() {
            let (mut b, mut h, mut s) = ([0.0; 2], [0.0; 2], [0.0; 2]);
            coefficients(m, &[x], &mut b, &mut h, &mut s)
                .ok_or(OracleError::NonFinite { path: i, step: 0 })?;
            let extra = extra_drift.map_or(0.0, |f| f(&[x], s[0]));
            drift.push(b[0] + extra);
            hq.push(h[0]);
            sigma.push(s[0]);
        }
        Self::from_tables(xs, drift, hq, sigma, interval, params, horizon)
    }

    pub fn from_tables(
        xs: Vec<f64>,
        drift: Vec<f64>,
        hq: Vec<f64>,
        sigma: Vec<f64>,
        interval: &UncertaintyInterval,
        params: &LatticeParams,
        horizon: f64,
    ) -> Result<Self, OracleError> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(OracleError::InvalidArgument(format!("horizon {horizon}")));
        }
        let levels = if params.levels.is_empty() {
            vec![interval.sigma_lo_sq(), interval.midpoint(), interval.sigma_hi_sq()]
        } else {
            params.levels.clone()
        };
        for &v in &levels {
            if !interval.contains(v) {
                return Err(OracleError::ScenarioOutOfBounds {
                    step: 0,
                    level: v,
                    lo: interval.sigma_lo_sq(),
                    hi: interval.sigma_hi_sq(),
                });
            }
        }
        let dt0 = match params.dt {
            Some(dt) if dt > 0.0 => dt,
            Some(dt) => return Err(OracleError::InvalidArgument(format!("time step {dt}"))),
            None => {
                let s2 = sigma.iter().fold(0.0f64, |a, s| a.max(s * s));
                if s2 > 0.0 {
                    0.5 * params.h * params.h / (interval.sigma_lo_sq() * s2)
                } else {
                    params.h
                }
            }
        };
        let steps = (horizon / dt0 - 1e-9).ceil().max(1.0) as usize;
        Ok(Self {
            x_lo: params.x_lo,
            h: params.h,
            dt: horizon / steps as f64,
            steps,
            levels,
            drift,
            hq,
            sigma,
            xs,
        })
    }

    #[inline]
    fn value(next: &[f64], idx: isize) -> f64 {
        let last = next.len() as isize - 1;
        if idx < 0 {
            next[0] + idx as f64 * (next[1] - next[0])
        } else if idx > last {
            next[last as usize] + (idx - last) as f64 * (next[last as usize] - next[last as usize - 1])
        } else {
            next[idx as usize]
        }
    }

    /// The three branches from node `j` at level `v`, or `None` when no jump
    /// size gives nonnegative weights.
    #[inline]
    pub fn branches(&self, j: usize, v: f64, next: &[f64]) -> Option<[Branch; 3]> {
        let x = self.xs[j];
        let mean = (self.drift[j] + self.hq[j] * v) * self.dt;
        let var = self.sigma[j] * self.sigma[j] * v * self.dt;
        let target = x + mean;
        let c = ((target - self.x_lo) / self.h).round();
        let delta = target - (self.x_lo + c * self.h);
        let q = var + delta * delta;
        let k = ((q.sqrt() / self.h).ceil().max(1.0)) as usize;
        if k > MAX_JUMP {
            return None;
        }
        let kh = k as f64 * self.h;
        if q < delta.abs() * kh * (1.0 - 1e-12) {
            return None;
        }
        let kh2 = kh * kh;
        let pu = (q + delta * kh) / (2.0 * kh2);
        let pd = (q - delta * kh) / (2.0 * kh2);
        let pm = 1.0 - q / kh2;
        let c = c as isize;
        let k = k as isize;
        let mk = |idx: isize, p: f64| {
            let xp = self.x_lo + idx as f64 * self.h;
            Branch {
                p: p.max(0.0),
                dx: xp - x,
                dev: xp - target,
                w: Self::value(next, idx),
            }
        };
        Some([mk(c - k, pd), mk(c, pm), mk(c + k, pu)])
    }

    /// One backward step: `out[j] = max_v node(j, v, branches)`.
    pub fn step(
        &self,
        next: &[f64],
        out: &mut [f64],
        node: &(dyn Fn(usize, f64, &[Branch; 3]) -> Result<f64, OracleError> + Sync),
    ) -> Result<(), OracleError> {
        let one = |j: usize, o: &mut f64| -> Result<(), OracleError> {
            let mut best = f64::NEG_INFINITY;
            for &v in &self.levels {
                let br = self
                    .branches(j, v, next)
                    .ok_or(OracleError::NegativeWeight { node: j, level: v })?;
                best = best.max(node(j, v, &br)?);
            }
            if !best.is_finite() {
                return Err(OracleError::NonFinite { path: j, step: 0 });
            }
            *o = best;
            Ok(())
        };
        if out.len() >= PAR_MIN {
            out.par_iter_mut().enumerate().try_for_each(|(j, o)| one(j, o))
        } else {
            out.iter_mut().enumerate().try_for_each(|(j, o)| one(j, o))
        }
    }

    /// Run all steps backward from `terminal`.
    pub fn solve(
        &self,
        terminal: Vec<f64>,
        node: &(dyn Fn(usize, f64, &[Branch; 3]) -> Result<f64, OracleError> + Sync),
    ) -> Result<Vec<f64>, OracleError> {
        let mut w = terminal;
        let mut scratch = vec![0.0; w.len()];
        for _ in 0..self.steps {
            self.step(&w, &mut scratch, node)?;
            std::mem::swap(&mut w, &mut scratch);
        }
        Ok(w)
    }
}

pub(crate) fn expectation(br: &[Branch; 3]) -> f64 {
    br.iter().map(|b| b.p * b.w).sum()
}

pub(crate) fn tabulate(xs: &[f64], e: &Expression) -> Result<Vec<f64>, OracleError> {
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            e.eval(&Vars::x(&[x]))
                .map_err(|_| OracleError::NonFinite { path: i, step: 0 })
        })
        .collect()
}

/// Worst-case value at `t = 0` of `payoff(X_T)` plus the model's drivers,
/// `Y = max_v { E_v[Y'] + dt f(x, E_v[Y'], Z_v) + v dt g(x, E_v[Y'], Z_v) }`,
/// on every lattice node.
pub fn lattice_value(
    m: &ModelSpec,
    payoff: &Expression,
    horizon: f64,
    params: &LatticeParams,
) -> Result<Field, OracleError> {
    let lat = Lattice::new(m, m.interval(), params, horizon, None)?;
    let terminal = tabulate(&lat.xs, payoff)?;
    let need_z = m.drivers_use_z();
    let f_zero = m.f().is_zero() && m.shift().y_dt == 0.0 && m.shift().c_dt == 0.0;
    let g_zero = m.g().is_zero() && m.shift().y_qv == 0.0 && m.shift().c_qv == 0.0;
    let dt = lat.dt;
    let node = |j: usize, v: f64, br: &[Branch; 3]| -> Result<f64, OracleError> {
        let ey = expectation(br);
        if f_zero && g_zero {
            return Ok(ey);
        }
        let s = lat.sigma[j];
        let z = if need_z && s != 0.0 {
            br.iter().map(|b| b.p * b.w * b.dev).sum::<f64>() / (s * v * dt)
        } else {
            0.0
        };
        let x = [lat.xs[j]];
        let mut val = ey;
        if !f_zero {
            val += dt * m.f_at(&x, ey, &[z])?;
        }
        if !g_zero {
            val += v * dt * m.g_at(&x, ey, &[z])?;
        }
        Ok(val)
    };
    let w = lat.solve(terminal, &node)?;
    Field::new(params.grid()?, w).map_err(|e| OracleError::InvalidArgument(e.to_string()))
}
