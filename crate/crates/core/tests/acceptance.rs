//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test -p gebsde --test acceptance`.

use std::error::Error;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use gebsde::control::{evaluate_j, optimal_feedback, ControlSpec, FeedbackTable};
use gebsde::ergodic::{
    abelian_tauberian_check, large_time, relax, vanishing_discount, DiscountSchedule,
    ErgodicProblem, ErgodicSolution,
};
use gebsde::mc_oracle::{
    lattice_value, linear_bsde_explicit, simulate_forward, LatticeParams, LinearDriver, Scenario,
};
use gebsde::models::{hamiltonian_from_control, Constants, Driver};
use gebsde::pde::{solve_finite_bsde, solve_infinite, solve_parabolic, Field, Grid};
use gebsde::{Expression, ModelSpec, UncertaintyInterval};

type Outcome = Result<(bool, String), Box<dyn Error + Send + Sync>>;

const SOLVE_TOL: f64 = 1e-8;
const ERGODIC_TOL: f64 = 1e-5;

fn ou_model(lo: f64, hi: f64, f: &str, constants: Constants) -> ModelSpec {
    ModelSpec::builder()
        .b(["-x"])
        .sigma(["1"])
        .f(f)
        .volatility(lo, hi)
        .constants(constants)
        .build()
        .expect("valid model")
}

fn ergodic_constants() -> Constants {
    Constants {
        lipschitz: 1.0,
        alpha: 1.0,
        eta: 1.0,
        ..Constants::default()
    }
}

fn monotone_constants() -> Constants {
    Constants {
        lipschitz: 1.0,
        alpha: 1.0,
        mu: 1.0,
        eta: 1.0,
        ..Constants::default()
    }
}

fn box_grid(h: f64) -> Grid {
    Grid::centered(1, 8.0, h).expect("valid grid")
}

/// Nodes and weights of Gauss-Hermite quadrature for the weight `exp(-x^2)`.
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z: f64 = 0.0;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let (mut p1, mut p2) = (pim4, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * (1.0 + z.abs()) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `E[f(X)]` with `X ~ N(0, 1/2)`, the stationary law of `dX = -X dt + dW`.
fn stationary_mean(f: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = gauss_hermite(80);
    x.iter().zip(&w).map(|(a, b)| b * f(*a)).sum::<f64>() / std::f64::consts::PI.sqrt()
}

struct Ergodic {
    problem: ErgodicProblem,
    coarse: ErgodicSolution,
    fine: ErgodicSolution,
    coarse_relaxed: ErgodicSolution,
    fine_relaxed: ErgodicSolution,
}

/// Nonlinear-volatility OU benchmark: `sigma^2 in [1, 4]`, `f = 1/(1+x^2)`.
fn nonlinear_ou() -> &'static Ergodic {
    static CELL: OnceLock<Ergodic> = OnceLock::new();
    CELL.get_or_init(|| {
        let m = ou_model(1.0, 4.0, "1/(1+x^2)", ergodic_constants());
        let problem = ErgodicProblem::standard(m).expect("feasible");
        let sched = DiscountSchedule::default();
        let coarse = vanishing_discount(&problem, &sched, &box_grid(0.1), ERGODIC_TOL).expect("coarse");
        let fine = vanishing_discount(&problem, &sched, &box_grid(0.05), ERGODIC_TOL).expect("fine");
        let coarse_relaxed = relax(&problem, &coarse, 1e-10).expect("relax coarse");
        let fine_relaxed = relax(&problem, &fine, 1e-10).expect("relax fine");
        Ergodic {
            problem,
            coarse,
            fine,
            coarse_relaxed,
            fine_relaxed,
        }
    })
}

fn classical_ou() -> &'static (ErgodicProblem, ErgodicSolution) {
    static CELL: OnceLock<(ErgodicProblem, ErgodicSolution)> = OnceLock::new();
    CELL.get_or_init(|| {
        let m = ou_model(1.0, 1.0, "1/(1+x^2)", ergodic_constants());
        let p = ErgodicProblem::standard(m).expect("feasible");
        let s = vanishing_discount(&p, &DiscountSchedule::default(), &box_grid(0.05), ERGODIC_TOL)
            .expect("classical");
        (p, s)
    })
}

fn control_spec() -> ControlSpec {
    ControlSpec::new(
        vec![vec![-1.0], vec![1.0]],
        Expression::parse("x^2/(1+x^2)+0.05*u").expect("kappa"),
        vec![Expression::parse("0.5*u").expect("R")],
    )
    .expect("control set")
}

fn control_model() -> ModelSpec {
    let c = control_spec();
    ModelSpec::builder()
        .b(["-x"])
        .sigma(["1"])
        .f_driver(Driver::Hamiltonian(hamiltonian_from_control(&c).expect("hamiltonian")))
        .volatility(1.0, 4.0)
        .constants(Constants {
            lipschitz: 1.0,
            alpha: 1.05,
            alpha2: 0.5,
            eta: 1.0,
            ..Constants::default()
        })
        .build()
        .expect("control model")
}

fn control_solution() -> &'static ErgodicSolution {
    static CELL: OnceLock<ErgodicSolution> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = ErgodicProblem::standard(control_model()).expect("feasible");
        let s = vanishing_discount(&p, &DiscountSchedule::default(), &box_grid(0.05), ERGODIC_TOL)
            .expect("control ergodic");
        relax(&p, &s, 1e-10).expect("control relax")
    })
}

/// Interior sup of `|u_h - u_2h|` over the nodes of the coarse grid.
fn scheme_error(fine: &Field, coarse: &Field) -> Result<f64, Box<dyn Error + Send + Sync>> {
    let g = coarse.grid();
    let mut e: f64 = 0.0;
    for i in 0..g.len() {
        if g.is_interior(i, 0.25) {
            let x = [g.node(i)[0]];
            e = e.max((fine.interpolate(&x)? - coarse.values()[i]).abs());
        }
    }
    Ok(e)
}

fn c1_g_heat() -> Outcome {
    let grid = Grid::uniform(-8.0, 8.0, 0.02)?;
    let m = ModelSpec::builder().b(["0"]).sigma(["1"]).f("0").volatility(1.0, 4.0).build()?;
    let up = solve_parabolic(&m, &Field::from_expression(&grid, &Expression::parse("x^2")?)?, 1.0, &grid)?;
    let dn = solve_parabolic(&m, &Field::from_expression(&grid, &Expression::parse("-x^2")?)?, 1.0, &grid)?;
    let a = up.last().interpolate(&[0.0])?;
    let b = dn.last().interpolate(&[0.0])?;
    let ok = (a - 4.0).abs() <= 0.02 * 4.0 && (b + 1.0).abs() <= 0.02;
    Ok((ok, format!("u(1,0) = {a:.6} (want 4), {b:.6} (want -1), {} nodes", grid.len())))
}

fn c2_constant() -> Outcome {
    let m = ou_model(1.0, 4.0, "0.7", Constants { alpha: 0.7, ..ergodic_constants() });
    let p = ErgodicProblem::standard(m)?;
    let grid = box_grid(0.1);
    let vd = vanishing_discount(&p, &DiscountSchedule::default(), &grid, 1e-8)?;
    let (lt, _) = large_time(&p, &Field::constant(&grid, 0.0), &[4.0, 8.0, 16.0], &[0.0], &grid)?;
    let ok = (vd.lambda - 0.7).abs() <= 1e-6 && (lt - 0.7).abs() <= 1e-6;
    Ok((ok, format!("vanishing discount {:.9}, large time {lt:.9}", vd.lambda)))
}

fn c3_classical() -> Outcome {
    let oracle = stationary_mean(|x| 1.0 / (1.0 + x * x));
    let (_, s) = classical_ou();
    let rel = (s.lambda - oracle).abs() / oracle;
    Ok((rel <= 0.01, format!("lambda {:.6}, quadrature {oracle:.10}, rel err {rel:.2e}", s.lambda)))
}

fn c4_a_priori() -> Outcome {
    let grid = box_grid(0.05);
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    let direct = [
        ("0.7-y", Constants { alpha: 0.7, ..monotone_constants() }),
        ("1/(1+x^2)-y", monotone_constants()),
        ("sin(x)-2*y", Constants { mu: 2.0, lipschitz: 2.0, ..monotone_constants() }),
    ];
    for (f, c) in direct {
        let m = ou_model(1.0, 4.0, f, c.clone());
        let u = solve_infinite(&m, SOLVE_TOL, &grid)?;
        worst = worst.max(u.sup_norm() - (c.alpha / c.mu + SOLVE_TOL));
        count += 1;
    }
    // Each discounted solve is an infinite-horizon solve with mu = eps |margin|.
    let e = nonlinear_ou();
    let runs = [
        (&e.problem, &e.coarse, 1.0),
        (&e.problem, &e.fine, 1.0),
        (&classical_ou().0, &classical_ou().1, 1.0),
    ];
    for (p, s, alpha) in runs {
        for r in &s.discounted {
            let mu = -p.margin() * r.eps;
            worst = worst.max(r.sup - (alpha / mu + ERGODIC_TOL / r.eps));
            count += 1;
        }
    }
    Ok((worst <= 0.0, format!("{count} solves, max(sup|u| - bound) = {worst:.3e}")))
}

fn c5_truncation() -> Outcome {
    let m = ou_model(1.0, 4.0, "1/(1+x^2)-y", monotone_constants());
    let (alpha, mu) = (1.0, 1.0);
    let value = |t: f64, h: f64| -> Result<(f64, Field), Box<dyn Error + Send + Sync>> {
        let grid = box_grid(h);
        let u = solve_parabolic(&m, &Field::constant(&grid, 0.0), t, &grid)?;
        let last = u.last().clone();
        Ok((last.interpolate(&[0.0])?, last))
    };
    let mut ok = true;
    let mut detail = Vec::new();
    for (n, mm) in [(2.0, 4.0), (4.0, 8.0)] {
        let (un, fn_) = value(n, 0.05)?;
        let (um, fm) = value(mm, 0.05)?;
        let (_, cn) = value(n, 0.1)?;
        let (_, cm) = value(mm, 0.1)?;
        let err = scheme_error(&fn_, &cn)?.max(scheme_error(&fm, &cm)?);
        let bound = alpha / mu * ((-mu * n).exp() - (-mu * mm).exp()) + 3.0 * err;
        let gap = (un - um).abs();
        ok &= gap <= bound;
        detail.push(format!("({n},{mm}): {gap:.4e} <= {bound:.4e}"));
    }
    Ok((ok, detail.join(", ")))
}

fn c6_comparison() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let grid = Grid::centered(1, 6.0, 0.1)?;
    let mut violations = 0usize;
    let mut min_gap = f64::INFINITY;
    for _ in 0..10 {
        let a: f64 = rng.random_range(-1.0..1.0);
        let k: f64 = rng.random_range(0.5..2.0);
        let c: f64 = rng.random_range(-0.2..0.2);
        let d: f64 = rng.random_range(-0.3..0.3);
        let s: f64 = rng.random_range(0.05..0.5);
        let f1 = format!("{a}*sin({k}*x)-y+{c}*z");
        let f2 = format!("{f1}+{s}*(1+cos(x))");
        let g = format!("{d}*cos(x)");
        let constants = Constants {
            lipschitz: 1.0,
            alpha: 2.0,
            mu: 1.0,
            alpha2: 0.2,
            ..Constants::default()
        };
        let build = |f: &str| {
            ModelSpec::builder()
                .b(["-x"])
                .sigma(["1"])
                .f(f)
                .g(g.as_str())
                .volatility(1.0, 4.0)
                .constants(constants)
                .build()
        };
        let u1 = solve_infinite(&build(&f1)?, SOLVE_TOL, &grid)?;
        let u2 = solve_infinite(&build(&f2)?, SOLVE_TOL, &grid)?;
        for (p, q) in u1.values().iter().zip(u2.values()) {
            if p > q {
                violations += 1;
            }
            min_gap = min_gap.min(q - p);
        }
    }
    Ok((violations == 0, format!("10 pairs, {violations} violations, min(u2-u1) = {min_gap:.3e}")))
}

fn c7_lipschitz() -> Outcome {
    let e = nonlinear_ou();
    let c = e.problem.model().constants();
    let m_bound = c.lipschitz_bound(e.problem.model().interval().sigma_hi_sq());
    let worst = e
        .fine
        .discounted
        .iter()
        .chain(&e.coarse.discounted)
        .map(|r| r.lipschitz)
        .fold(0.0, f64::max);
    Ok((worst <= 1.1 * m_bound, format!("max sup|Dv| = {worst:.4}, M = {m_bound:.4}")))
}

fn c8_discount_bound() -> Outcome {
    let e = nonlinear_ou();
    let tol = 1e-3;
    let alpha = e.problem.model().constants().alpha;
    let mut worst = f64::NEG_INFINITY;
    for r in e.fine.discounted.iter().chain(&e.coarse.discounted) {
        let bound = alpha / (-e.problem.margin() * r.eps) * (1.0 + tol);
        worst = worst.max(r.sup / bound);
    }
    Ok((worst <= 1.0, format!("max sup|v^eps| / bound = {worst:.4}")))
}

fn c9_residual() -> Outcome {
    let e = nonlinear_ou();
    let (a, b) = (e.coarse_relaxed.residual_norm, e.fine_relaxed.residual_norm);
    let ratio = b / a;
    Ok((
        (0.3..=0.7).contains(&ratio),
        format!("residual h=0.1: {a:.4e}, h=0.05: {b:.4e}, ratio {ratio:.3}"),
    ))
}

fn c10_cross_method() -> Outcome {
    let e = nonlinear_ou();
    let grid = box_grid(0.05);
    let (lt, rep) = large_time(&e.problem, &Field::constant(&grid, 0.0), &[4.0, 8.0, 16.0], &[0.0], &grid)?;
    let (_, rep1) = large_time(&e.problem, &Field::constant(&grid, 0.0), &[4.0, 8.0, 16.0], &[1.0], &grid)?;
    let rel = (lt - e.fine.lambda).abs() / e.fine.lambda;
    let ok = rel <= 0.02 && rep.bound_holds && rep1.bound_holds;
    Ok((
        ok,
        format!(
            "vanishing discount {:.6}, large time {lt:.6}, rel {rel:.2e}, C_est {:?}",
            e.fine.lambda,
            rep.rows.iter().map(|r| (r.c_est * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    ))
}

fn c11_dual_solver() -> Outcome {
    let (h_pde, h_lat) = (0.05, 0.05);
    let tol = 2.0 * (h_pde + h_lat);
    let grid = box_grid(h_pde);
    let params = LatticeParams::new(-8.0, 8.0, h_lat);
    let mut ok = true;
    let mut detail = Vec::new();
    let cases: [(&str, &str, &str, &str, f64, f64); 3] = [
        ("g-heat", "0", "0", "sin(x)", 1.0, 0.5),
        ("ou", "-x", "1/(1+x^2)", "0", 2.0, 0.5),
        ("linear", "0", "-y", "x^2", 1.0, 0.0),
    ];
    for (name, b, f, phi, t, x) in cases {
        let mut builder = ModelSpec::builder().b([b]).sigma(["1"]).f(f).volatility(1.0, 4.0);
        if name == "linear" {
            builder = builder.g("0.5*z").constants(Constants {
                lipschitz: 1.0,
                alpha2: 0.5,
                ..Constants::default()
            });
        }
        let m = builder.build()?;
        let payoff = Expression::parse(phi)?;
        let (y, _) = solve_finite_bsde(&m, &Field::from_expression(&grid, &payoff)?, t, &[x], &grid)?;
        let lat = lattice_value(&m, &payoff, t, &params)?.interpolate(&[x])?;
        ok &= (y - lat).abs() <= tol;
        detail.push(format!("{name}: pde {y:.5} lattice {lat:.5}"));
        if name == "linear" {
            let ld = LinearDriver {
                a: -1.0,
                b: 0.0,
                c: 0.0,
                d: 0.5,
                m: 0.0,
                n: 0.0,
                payoff: payoff.clone(),
                interval: UncertaintyInterval::scalar(1.0, 4.0)?,
                alpha2: 0.5,
            };
            let exp = linear_bsde_explicit(&ld, t, &params)?;
            ok &= (y - exp).abs() <= tol;
            detail.push(format!("explicit {exp:.5}"));
        }
    }
    Ok((ok, format!("{} (tol {tol})", detail.join(", "))))
}

fn c12_abelian_tauberian() -> Outcome {
    let grid = box_grid(0.1);
    let e = nonlinear_ou();
    let mut ok = true;
    let mut detail = Vec::new();
    let constant = ErgodicProblem::standard(ou_model(1.0, 4.0, "0.7", Constants { alpha: 0.7, ..ergodic_constants() }))?;
    let runs = [("constant", &constant, 0.7), ("nonlinear ou", &e.problem, e.coarse.lambda)];
    for (name, p, lambda) in runs {
        let rep = abelian_tauberian_check(p, lambda, &[0.0], &DiscountSchedule::default(), &[4.0, 8.0, 16.0], &grid, 0.02)?;
        ok &= rep.agree;
        detail.push(format!(
            "{name}: discounted {:.6}, time average {:.6}, lambda {lambda:.6}",
            rep.discounted_limit, rep.time_average
        ));
    }
    Ok((ok, detail.join("; ")))
}

fn c13_control() -> Outcome {
    let c = control_spec();
    let m = control_model();
    let sol = control_solution();
    let grid = sol.v.grid().clone();
    let params = LatticeParams::new(-8.0, 8.0, 0.05);
    let horizons = [4.0, 8.0, 16.0];
    let fb = optimal_feedback(&c, sol, &m, &grid)?;
    let j_star = evaluate_j(&m, &c, &fb, &[0.0], &horizons, &params)?;
    let lambda = sol.lambda;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let tables: Vec<Vec<usize>> = (0..20)
        .map(|k| {
            if k % 2 == 0 {
                (0..grid.len()).map(|_| rng.random_range(0..2)).collect()
            } else {
                let cut: f64 = rng.random_range(-2.0..2.0);
                let flip = rng.random_bool(0.5);
                (0..grid.len())
                    .map(|i| usize::from((grid.node(i)[0] > cut) ^ flip))
                    .collect()
            }
        })
        .collect();
    let costs: Vec<f64> = tables
        .into_par_iter()
        .map(|t| -> Result<f64, Box<dyn Error + Send + Sync>> {
            let table = FeedbackTable::new(grid.clone(), t, c.controls.clone())?;
            Ok(evaluate_j(&m, &c, &table, &[0.0], &horizons, &params)?.estimate)
        })
        .collect::<Result<_, _>>()?;
    let min_cost = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let gap = j_star.gap(lambda) / lambda;
    let ok = gap <= 0.03 && min_cost >= lambda * (1.0 - 0.03);
    Ok((
        ok,
        format!(
            "lambda {lambda:.6}, J(u*) {:.6} (rel gap {gap:.2e}), min over 20 random feedbacks {min_cost:.6}",
            j_star.estimate
        ),
    ))
}

fn c14_contraction() -> Outcome {
    let m = ModelSpec::builder()
        .b(["-x-0.5*sin(x)"])
        .sigma(["1"])
        .f("0")
        .volatility(1.0, 4.0)
        .build()?;
    let eta = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let levels: Vec<f64> = (0..8).map(|_| rng.random_range(1.0..=4.0)).collect();
    let mut ok = true;
    let mut detail = Vec::new();
    for t in [1.0, 2.0] {
        let sc = Scenario::new(t, levels.clone(), 50)?;
        let (x, xp) = (1.5, -0.5);
        let a = simulate_forward(&m, &sc, &[x], 4000, 99)?;
        let b = simulate_forward(&m, &sc, &[xp], 4000, 99)?;
        let n = a.n_paths();
        let mean = (0..n)
            .map(|p| (a.terminal(p)[0] - b.terminal(p)[0]).powi(2))
            .sum::<f64>()
            / n as f64;
        let bound = (-2.0 * eta * t).exp() * (x - xp) * (x - xp) * 1.05 + a.dt();
        ok &= mean <= bound;
        detail.push(format!("t={t}: {mean:.5} <= {bound:.5}"));
    }
    Ok((ok, detail.join(", ")))
}

fn c15_stability() -> Outcome {
    let grid = box_grid(0.05);
    let delta = 0.05;
    let c = monotone_constants();
    let base = solve_infinite(&ou_model(1.0, 4.0, "1/(1+x^2)-y", c.clone()), SOLVE_TOL, &grid)?;
    let pert = solve_infinite(
        &ou_model(1.0, 4.0, &format!("1/(1+x^2)-y+{delta}*cos(x)"), Constants { alpha: 1.05, ..c }),
        SOLVE_TOL,
        &grid,
    )?;
    let d = base.sup_distance(&pert);
    let bound = delta / c.mu + SOLVE_TOL;
    Ok((d <= bound, format!("sup|u - u_delta| = {d:.5} <= {bound:.5}")))
}

fn c16_flow() -> Outcome {
    let m = ou_model(1.0, 4.0, "1/(1+x^2)-y", monotone_constants());
    let fine = box_grid(0.05);
    let u = solve_infinite(&m, SOLVE_TOL, &fine)?;
    let coarse = solve_infinite(&m, SOLVE_TOL, &box_grid(0.1))?;
    let err = scheme_error(&u, &coarse)?;
    let flow = solve_parabolic(&m, &u, 2.0, &fine)?;
    let drift = flow
        .slices()
        .iter()
        .map(|s| s.sup_distance(&u))
        .fold(0.0, f64::max);
    Ok((
        drift <= 2.0 * err,
        format!("{} slices, max drift {drift:.3e}, scheme error {err:.3e}", flow.slices().len()),
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 16] = [
        ("G-heat exactness", c1_g_heat),
        ("constant-driver ergodic", c2_constant),
        ("classical reduction", c3_classical),
        ("a-priori bound", c4_a_priori),
        ("truncation decay", c5_truncation),
        ("discrete comparison", c6_comparison),
        ("Lipschitz bound", c7_lipschitz),
        ("discount bound", c8_discount_bound),
        ("ergodic residual convergence", c9_residual),
        ("cross-method lambda", c10_cross_method),
        ("dual-solver agreement", c11_dual_solver),
        ("Abelian-Tauberian", c12_abelian_tauberian),
        ("control optimality", c13_control),
        ("forward contraction", c14_contraction),
        ("stability", c15_stability),
        ("flow property", c16_flow),
    ];
    let start = Instant::now();
    let results: Vec<(bool, String, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|(_, run)| {
                s.spawn(move || {
                    let t = Instant::now();
                    let out = std::panic::catch_unwind(run);
                    let secs = t.elapsed().as_secs_f64();
                    match out {
                        Ok(Ok((ok, detail))) => (ok, detail, secs),
                        Ok(Err(e)) => (false, format!("error: {e}"), secs),
                        Err(_) => (false, "panicked".to_string(), secs),
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("joined")).collect()
    });
    let mut failed = 0;
    for (k, ((name, _), (ok, detail, secs))) in criteria.iter().zip(&results).enumerate() {
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<30} {} [{secs:.1}s] {detail}",
            k + 1,
            name,
            if *ok { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        criteria.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
