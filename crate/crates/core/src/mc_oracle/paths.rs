use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::OracleError;
use crate::expr::{Expression, Vars};
use crate::gcalculus::UncertaintyInterval;
use crate::models::ModelSpec;

/// Largest number of open-loop scenarios [`upper_expectation_scenarios`]
/// will enumerate.
pub const SCENARIO_GUARD: u128 = 6561;

/// A volatility control on a fixed time grid: the level of `d<B>/dt` used
/// over each Euler step, possibly depending on the current state.
pub trait VolatilityControl: Sync {
    fn horizon(&self) -> f64;
    fn steps(&self) -> usize;
    fn level(&self, step: usize, x: &[f64]) -> f64;

    fn dt(&self) -> f64 {
        self.horizon() / self.steps() as f64
    }
}

/// Piecewise-constant open-loop volatility: `levels[k]` holds on the `k`-th
/// of `levels.len()` equal intervals, each split into `substeps` Euler steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    horizon: f64,
    levels: Vec<f64>,
    substeps: usize,
}

impl Scenario {
    pub fn new(horizon: f64, levels: Vec<f64>, substeps: usize) -> Result<Self, OracleError> {
        if !(horizon > 0.0) || !horizon.is_finite() || levels.is_empty() || substeps == 0 {
            return Err(OracleError::InvalidArgument(format!(
                "scenario with horizon {horizon}, {} levels, {substeps} substeps",
                levels.len()
            )));
        }
        Ok(Self {
            horizon,
            levels,
            substeps,
        })
    }

    /// The same level on every one of `steps` Euler steps.
    pub fn constant(horizon: f64, level: f64, steps: usize) -> Result<Self, OracleError> {
        Self::new(horizon, vec![level], steps)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn validate(&self, interval: &UncertaintyInterval) -> Result<(), OracleError> {
        for (k, &v) in self.levels.iter().enumerate() {
            if !interval.contains(v) {
                return Err(OracleError::ScenarioOutOfBounds {
                    step: k * self.substeps,
                    level: v,
                    lo: interval.sigma_lo_sq(),
                    hi: interval.sigma_hi_sq(),
                });
            }
        }
        Ok(())
    }
}

impl VolatilityControl for Scenario {
    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn steps(&self) -> usize {
        self.levels.len() * self.substeps
    }

    fn level(&self, step: usize, _x: &[f64]) -> f64 {
        self.levels[step / self.substeps]
    }
}

/// Simulated forward paths with their Brownian and bracket increments.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    n: usize,
    n_paths: usize,
    dt: f64,
    times: Vec<f64>,
    /// `n_paths x (steps + 1) x n`.
    states: Vec<f64>,
    /// `dB = sqrt(v) dW`, `n_paths x steps`.
    increments: Vec<f64>,
    /// `v`, `n_paths x steps`; the bracket increment is `v dt`.
    levels: Vec<f64>,
    seed: u64,
}

impl PathBundle {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let at = (path * (self.steps() + 1) + step) * self.n;
        &self.states[at..at + self.n]
    }

    pub fn terminal(&self, path: usize) -> &[f64] {
        self.state(path, self.steps())
    }

    pub fn increment(&self, path: usize, step: usize) -> f64 {
        self.increments[path * self.steps() + step]
    }

    pub fn level(&self, path: usize, step: usize) -> f64 {
        self.levels[path * self.steps() + step]
    }

    /// Bracket increment `d<B>` over `step`.
    pub fn bracket(&self, path: usize, step: usize) -> f64 {
        self.level(path, step) * self.dt
    }

    /// Rows `t,path_id,x[,y],dB,v`; the last time of each path has empty
    /// increment columns.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(if self.n == 1 {
            "t,path_id,x,dB,v\n"
        } else {
            "t,path_id,x,y,dB,v\n"
        });
        for p in 0..self.n_paths {
            for k in 0..=self.steps() {
                let _ = write!(s, "{},{p}", self.times[k]);
                for c in self.state(p, k) {
                    let _ = write!(s, ",{c}");
                }
                if k < self.steps() {
                    let _ = writeln!(s, ",{},{}", self.increment(p, k), self.level(p, k));
                } else {
                    s.push_str(",,\n");
                }
            }
        }
        s
    }
}

/// The deterministic random stream of one path.
pub(crate) fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Coefficients `b, h, sigma` at `x` written into fixed arrays.
pub(crate) fn coefficients(
    m: &ModelSpec,
    x: &[f64],
    b: &mut [f64; 2],
    h: &mut [f64; 2],
    s: &mut [f64; 2],
) -> Option<()> {
    let vars = Vars::x(x);
    for k in 0..m.n() {
        b[k] = m.b()[k].eval(&vars).ok()?;
        h[k] = m.h()[k].eval(&vars).ok()?;
        s[k] = m.sigma()[k].eval(&vars).ok()?;
    }
    Some(())
}

/// One Euler-Maruyama step; returns `dB`.
#[inline]
fn euler(
    m: &ModelSpec,
    x: &mut [f64],
    v: f64,
    dt: f64,
    rng: &mut ChaCha8Rng,
) -> Option<f64> {
    let (mut b, mut h, mut s) = ([0.0; 2], [0.0; 2], [0.0; 2]);
    coefficients(m, x, &mut b, &mut h, &mut s)?;
    let w: f64 = StandardNormal.sample(rng);
    let db = v.sqrt() * dt.sqrt() * w;
    for k in 0..x.len() {
        x[k] += b[k] * dt + h[k] * v * dt + s[k] * db;
    }
    x.iter().all(|c| c.is_finite()).then_some(db)
}

fn check_x0(m: &ModelSpec, x0: &[f64]) -> Result<(), OracleError> {
    if x0.len() != m.n() {
        return Err(OracleError::InvalidArgument(format!(
            "starting point has {} coordinates, model has n = {}",
            x0.len(),
            m.n()
        )));
    }
    Ok(())
}

/// Euler-Maruyama paths under a volatility control. Path `p` draws its
/// normals from stream `p` of the seeded generator, so bundles with the
/// same seed share their driving noise path by path.
pub fn simulate_controlled(
    m: &ModelSpec,
    control: &dyn VolatilityControl,
    x0: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle, OracleError> {
    check_x0(m, x0)?;
    let steps = control.steps();
    let dt = control.dt();
    let n = m.n();
    let interval = *m.interval();
    let mut states = vec![0.0; n_paths * (steps + 1) * n];
    let mut increments = vec![0.0; n_paths * steps];
    let mut levels = vec![0.0; n_paths * steps];
    states
        .par_chunks_mut((steps + 1) * n)
        .zip(increments.par_chunks_mut(steps.max(1)))
        .zip(levels.par_chunks_mut(steps.max(1)))
        .enumerate()
        .try_for_each(|(p, ((xs, dbs), vs))| {
            let mut rng = path_rng(seed, p);
            let mut x = x0.to_vec();
            xs[..n].copy_from_slice(&x);
            for k in 0..steps {
                let v = control.level(k, &x);
                if !interval.contains(v) {
                    return Err(OracleError::ScenarioOutOfBounds {
                        step: k,
                        level: v,
                        lo: interval.sigma_lo_sq(),
                        hi: interval.sigma_hi_sq(),
                    });
                }
                let db = euler(m, &mut x, v, dt, &mut rng)
                    .ok_or(OracleError::NonFinite { path: p, step: k })?;
                dbs[k] = db;
                vs[k] = v;
                xs[(k + 1) * n..(k + 2) * n].copy_from_slice(&x);
            }
            Ok(())
        })?;
    Ok(PathBundle {
        n,
        n_paths,
        dt,
        times: (0..=steps).map(|k| k as f64 * dt).collect(),
        states,
        increments,
        levels,
        seed,
    })
}

/// Forward paths under an open-loop scenario.
pub fn simulate_forward(
    m: &ModelSpec,
    sc: &Scenario,
    x0: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle, OracleError> {
    sc.validate(m.interval())?;
    simulate_controlled(m, sc, x0, n_paths, seed)
}

/// Settings for [`upper_expectation_scenarios`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSearch {
    pub horizon: f64,
    /// Number `K` of piecewise-constant intervals.
    pub intervals: usize,
    /// Candidate levels; empty means `{lo, midpoint, hi}`.
    pub levels: Vec<f64>,
    pub substeps: usize,
    pub n_paths: usize,
    pub seed: u64,
}

/// Best open-loop scenario found by enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioValue {
    pub value: f64,
    pub std_err: f64,
    pub levels: Vec<f64>,
    pub scenarios: usize,
}

/// Maximum over all `M^K` piecewise-constant open-loop scenarios of the
/// Monte Carlo mean of `payoff(X_T)`. Every scenario uses the same driving
/// noise. Open-loop controls cannot react to the path, so this is a lower
/// bound for the adapted worst case computed by [`super::lattice_value`].
pub fn upper_expectation_scenarios(
    m: &ModelSpec,
    payoff: &Expression,
    x0: &[f64],
    search: &ScenarioSearch,
) -> Result<ScenarioValue, OracleError> {
    check_x0(m, x0)?;
    let iv = m.interval();
    let levels = if search.levels.is_empty() {
        vec![iv.sigma_lo_sq(), iv.midpoint(), iv.sigma_hi_sq()]
    } else {
        search.levels.clone()
    };
    let k = search.intervals;
    let mm = levels.len();
    if mm < 2 || k == 0 || search.n_paths < 2 {
        return Err(OracleError::InvalidArgument(format!(
            "need at least 2 levels, 1 interval and 2 paths (got {mm}, {k}, {})",
            search.n_paths
        )));
    }
    let count = (mm as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if k > 8 || count > SCENARIO_GUARD {
        return Err(OracleError::EnumerationGuard {
            count,
            guard: SCENARIO_GUARD,
        });
    }
    let count = count as usize;
    let scenarios: Vec<Scenario> = (0..count)
        .map(|mut code| {
            let mut ls = Vec::with_capacity(k);
            for _ in 0..k {
                ls.push(levels[code % mm]);
                code /= mm;
            }
            Scenario::new(search.horizon, ls, search.substeps)
        })
        .collect::<Result<_, _>>()?;
    for sc in &scenarios {
        sc.validate(iv)?;
    }
    let results: Vec<(f64, f64)> = scenarios
        .par_iter()
        .map(|sc| terminal_mean(m, sc, payoff, x0, search.n_paths, search.seed))
        .collect::<Result<_, _>>()?;
    let (best, &(value, std_err)) = results
        .iter()
        .enumerate()
        .fold(None, |acc: Option<(usize, &(f64, f64))>, (i, r)| match acc {
            Some((_, b)) if b.0 >= r.0 => acc,
            _ => Some((i, r)),
        })
        .expect("at least one scenario");
    Ok(ScenarioValue {
        value,
        std_err,
        levels: scenarios[best].levels.clone(),
        scenarios: count,
    })
}

/// Mean and standard error of `payoff(X_T)` without storing paths.
pub(crate) fn terminal_mean(
    m: &ModelSpec,
    sc: &Scenario,
    payoff: &Expression,
    x0: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<(f64, f64), OracleError> {
    let steps = sc.steps();
    let dt = sc.dt();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for p in 0..n_paths {
        let mut rng = path_rng(seed, p);
        let mut x = x0.to_vec();
        for k in 0..steps {
            let v = sc.level(k, &x);
            euler(m, &mut x, v, dt, &mut rng)
                .ok_or(OracleError::NonFinite { path: p, step: k })?;
        }
        let y = payoff
            .eval(&Vars::x(&x))
            .map_err(|_| OracleError::NonFinite { path: p, step: steps })?;
        sum += y;
        sum_sq += y * y;
    }
    let nf = n_paths as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok((mean, (var / nf).sqrt()))
}
