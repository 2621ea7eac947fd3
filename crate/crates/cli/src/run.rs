//! Subcommand pipelines. Each stage returns its results and checks; the
//! ergodic solution is computed once per run and shared.

use std::cell::OnceCell;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gebsde::control::{evaluate_j, optimal_feedback, FeedbackTable};
use gebsde::ergodic::{
    abelian_tauberian_check, ebsde_verify, implied_lambda, lambda_uniqueness_check, large_time,
    relax, vanishing_discount, ErgodicProblem, ErgodicSolution, WorstCaseVolatility,
};
use gebsde::mc_oracle::{
    lattice_value, simulate_controlled, upper_expectation_scenarios, LatticeParams,
    ScenarioSearch,
};
use gebsde::models::{check_assumptions, SamplingPlan, Verdict};
use gebsde::pde::{solve_discounted, solve_finite_bsde, solve_infinite, solve_parabolic, Field, Grid};
use gebsde::{Expression, ModelSpec};

use crate::config::{Overrides, RunConfig};
use crate::error::CliError;
use crate::report::{config_hash, RunReport, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Check,
    Parabolic,
    Elliptic,
    Discounted,
    Ergodic,
    LargeTime,
    Oracle,
    Control,
    Verify,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Parabolic => "parabolic",
            Command::Elliptic => "elliptic",
            Command::Discounted => "discounted",
            Command::Ergodic => "ergodic",
            Command::LargeTime => "large-time",
            Command::Oracle => "oracle",
            Command::Control => "control",
            Command::Verify => "verify",
            Command::Report => "report",
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    model: ModelSpec,
    grid: Grid,
    out: PathBuf,
    ergodic: OnceCell<(ErgodicProblem, ErgodicSolution)>,
}

const DEFAULT_CROSS_REL: f64 = 0.02;
const DEFAULT_CONTROL_REL: f64 = 0.03;
const DEFAULT_CLOSURE: f64 = 0.02;
const ELLIPTIC_TOL: f64 = 1e-8;

impl Ctx {
    fn write(&self, stage: &mut Stage, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        stage.files.push(name.to_string());
        Ok(())
    }

    fn problem(&self) -> Result<ErgodicProblem, CliError> {
        let e = &self.cfg.ergodic;
        ErgodicProblem::new(self.model.clone(), e.gamma1, e.gamma2)
            .map_err(|err| CliError::Config(err.to_string()))
    }

    fn ergodic(&self) -> Result<&(ErgodicProblem, ErgodicSolution), CliError> {
        if let Some(e) = self.ergodic.get() {
            return Ok(e);
        }
        let p = self.problem()?;
        let e = &self.cfg.ergodic;
        let sched = self.cfg.schedule()?;
        let mut sol = vanishing_discount(&p, &sched, &self.grid, e.tol)
            .map_err(|err| CliError::numerical("ergodic", err))?;
        if e.relax_tol > 0.0 {
            sol = relax(&p, &sol, e.relax_tol).map_err(|err| CliError::numerical("ergodic", err))?;
        }
        Ok(self.ergodic.get_or_init(|| (p, sol)))
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x:.10}")
}

fn stage_check(ctx: &Ctx) -> Result<Stage, CliError> {
    let mut st = Stage::new("check");
    let half = ctx.cfg.grid.half_width.min(4.0);
    let rep = check_assumptions(&ctx.model, &SamplingPlan::around_origin(ctx.model.n(), half))?;
    st.result("assumptions", rep.to_string().trim_end());
    for c in &rep.checks {
        if c.verdict != Verdict::NotCheckable {
            st.check(&c.name, c.verdict == Verdict::HoldsOnSample, format!("margin {:+.6e}", c.margin));
        }
    }
    Ok(st)
}

fn stage_parabolic(ctx: &Ctx) -> Result<Stage, CliError> {
    let mut st = Stage::new("parabolic");
    let b = ctx.cfg.parabolic()?;
    let phi = Expression::parse(&b.terminal).map_err(|e| CliError::Config(format!("terminal: {e}")))?;
    let phi = Field::from_expression(&ctx.grid, &phi).map_err(|e| CliError::numerical("parabolic", e))?;
    let u = solve_parabolic(&ctx.model, &phi, b.horizon, &ctx.grid)
        .map_err(|e| CliError::numerical("parabolic", e))?;
    let value = u
        .last()
        .interpolate(&b.x)
        .map_err(|e| CliError::Config(format!("parabolic.x: {e}")))?;
    st.result("horizon", b.horizon);
    st.result("x", format!("{:?}", b.x));
    st.result("u(T,x)", fmt_num(value));
    st.result("sup|u(T)|", fmt_num(u.last().sup_norm()));
    if let Some(want) = ctx.cfg.expect.value {
        let tol = ctx.cfg.expect.value_tol.unwrap_or(1e-2 * (1.0 + want.abs()));
        st.check(
            "value",
            (value - want).abs() <= tol,
            format!("|{value:.8} - {want}| <= {tol}"),
        );
    }
    ctx.write(&mut st, "parabolic.csv", &u.to_csv())?;
    Ok(st)
}

fn stage_elliptic(ctx: &Ctx) -> Result<Stage, CliError> {
    let mut st = Stage::new("elliptic");
    let c = ctx.model.constants();
    if !(c.mu > 0.0) {
        return Err(CliError::Config("elliptic solve needs mu > 0 in [model]".into()));
    }
    let tol = ctx.cfg.discounted.as_ref().map_or(ELLIPTIC_TOL, |d| d.tol);
    let u = solve_infinite(&ctx.model, tol, &ctx.grid).map_err(|e| CliError::numerical("elliptic", e))?;
    let sup = u.sup_norm();
    let bound = c.alpha / c.mu + tol;
    st.result("u(0)", fmt_num(u.interpolate(&vec![0.0; ctx.model.n()]).unwrap_or(f64::NAN)));
    st.result("sup|u|", fmt_num(sup));
    st.check("a-priori bound", sup <= bound, format!("sup|u| = {sup:.8} <= alpha/mu + tol = {bound:.8}"));
    ctx.write(&mut st, "elliptic.csv", &u.to_csv())?;
    Ok(st)
}

fn stage_discounted(ctx: &Ctx) -> Result<Stage, CliError> {
    let mut st = Stage::new("discounted");
    let d = ctx
        .cfg
        .discounted
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [discounted] block".into()))?;
    let e = &ctx.cfg.ergodic;
    let p = ctx.problem()?;
    let v = solve_discounted(&ctx.model, d.eps, e.gamma1, e.gamma2, d.tol, &ctx.grid)
        .map_err(|err| CliError::numerical("discounted", err))?;
    let sup = v.sup_norm();
    let alpha = ctx.model.constants().alpha;
    let bound = alpha / (-p.margin() * d.eps) * (1.0 + 1e-3) + d.tol;
    let v0 = v.interpolate(&vec![0.0; ctx.model.n()]).unwrap_or(f64::NAN);
    st.result("eps", d.eps);
    st.result("v(0)", fmt_num(v0));
    st.result("eps v(0)", fmt_num(d.eps * v0));
    st.result("sup|v|", fmt_num(sup));
    st.check("discount bound", sup <= bound, format!("sup|v| = {sup:.6} <= {bound:.6}"));
    ctx.write(&mut st, "discounted.csv", &v.to_csv())?;
    Ok(st)
}

fn stage_ergodic(ctx: &Ctx) -> Result<Stage, CliError> {
    let mut st = Stage::new("ergodic");
    let (p, sol) = ctx.ergodic()?;
    st.result("lambda", fmt_num(sol.lambda));
    let mut hist = String::new();
    for (e, l) in &sol.lambda_history {
        let _ = writeln!(hist, "eps = {e:<10} eps v(0) = {l:.10}");
    }
    st.result("history", hist.trim_end());
    st.result("lipschitz estimate", format!("{:.6}", sol.lipschitz_estimate));
    st.result("residual (interior sup)", format!("{:.6e}", sol.residual_norm));
    let implied = implied_lambda(p, &sol.v).map_err(|e| CliError::numerical("ergodic", e))?;
    st.result("implied lambda", fmt_num(implied));
    let exp = &ctx.cfg.expect;
    if let Some(want) = exp.lambda {
        let tol = exp.lambda_tol.unwrap_or(DEFAULT_CROSS_REL * want.abs().max(1e-12));
        st.check(
            "lambda",
            (sol.lambda - want).abs() <= tol,
            format!("|{:.10} - {want}| <= {tol}", sol.lambda),
        );
    }
    let rel = exp.cross_rel.unwrap_or(DEFAULT_CROSS_REL);
    st.check(
        "implied lambda",
        (implied - sol.lambda).abs() <= rel * (1e-12 + sol.lambda.abs()),
        format!("{implied:.10} vs {:.10}", sol.lambda),
    );
    let alpha = ctx.model.constants().alpha;
    let worst = sol
        .discounted
        .iter()
        .map(|r| r.sup / (alpha / (-p.margin() * r.eps) * (1.0 + 1e-3)))
        .fold(0.0, f64::max);
    st.check("discount bound", worst <= 1.0, format!("max sup|v^eps| / bound = {worst:.4}"));
    let m_bound = ctx.model.lipschitz_bound();
    if m_bound.is_finite() {
        let lip = sol.discounted.iter().map(|r| r.lipschitz).fold(0.0, f64::max);
        st.check(
            "lipschitz bound",
            lip <= 1.1 * m_bound,
            format!("max sup|Dv^eps| = {lip:.4} <= 1.1 M, M = {m_bound:.4}"),
        );
    }
    ctx.write(&mut st, "lambda_history.csv", &sol.history_csv())?;
    ctx.write(&mut st, "ergodic_v.csv", &sol.v.to_csv())?;
    Ok(st)
}

fn stage_large_time(ctx: &Ctx) -> Result<Stage, CliError> {
    let mut st = Stage::new("large-time");
    let p = ctx.problem()?;
    let e = &ctx.cfg.ergodic;
    let n = ctx.model.n();
    if e.x.len() % n != 0 || e.x.is_empty() {
        return Err(CliError::Config(format!("ergodic.x must hold points of dimension {n}")));
    }
    let phi = Field::constant(&ctx.grid, 0.0);
    let mut csv = String::from(if n == 1 { "x,T,u,gap,c_est\n" } else { "x,y,T,u,gap,c_est\n" });
    let mut lambdas = Vec::new();
    for x in e.x.chunks(n) {
        let (l, rep) = large_time(&p, &phi, &e.horizons, x, &ctx.grid)
            .map_err(|err| CliError::numerical("large-time", err))?;
        st.result(&format!("lambda at {x:?}"), fmt_num(l));
        st.result(&format!("table at {x:?}"), rep.to_string());
        st.check(&format!("1/T decay at {x:?}"), rep.bound_holds, format!("slopes {:?}", rep.slopes));
        for r in &rep.rows {
            let coords: Vec<String> = x.iter().map(f64::to_string).collect();
            let _ = writeln!(csv, "{},{},{},{},{}", coords.join(","), r.horizon, r.u, r.gap, r.c_est);
        }
        lambdas.push(l);
    }
    if let Some(want) = ctx.cfg.expect.lambda {
        let tol = ctx.cfg.expect.lambda_tol.unwrap_or(DEFAULT_CROSS_REL * want.abs().max(1e-12));
        let worst = lambdas.iter().map(|l| (l - want).abs()).fold(0.0, f64::max);
        st.check("lambda", worst <= tol, format!("max |lambda - {want}| = {worst:.3e} <= {tol}"));
    }
    ctx.write(&mut st, "large_time.csv", &csv)?;
    Ok(st)
}

fn stage_oracle(ctx: &Ctx) -> Result<Stage, CliError> {
    let mut st = Stage::new("oracle");
    let b = ctx.cfg.parabolic()?;
    let o = ctx.cfg.oracle.clone().unwrap_or_default();
    if ctx.model.n() != 1 {
        return Err(CliError::Config("the lattice oracle supports n = 1".into()));
    }
    let payoff = Expression::parse(&b.terminal).map_err(|e| CliError::Config(format!("terminal: {e}")))?;
    let phi = Field::from_expression(&ctx.grid, &payoff).map_err(|e| CliError::numerical("oracle", e))?;
    let (pde, _) = solve_finite_bsde(&ctx.model, &phi, b.horizon, &b.x, &ctx.grid)
        .map_err(|e| CliError::numerical("oracle", e))?;
    let w = ctx.grid.axes()[0].hi();
    let params = LatticeParams::new(-w, w, o.h);
    let lat = lattice_value(&ctx.model, &payoff, b.horizon, &params)
        .and_then(|f| f.interpolate(&b.x).map_err(|e| gebsde::OracleError::InvalidArgument(e.to_string())))
        .map_err(|e| CliError::numerical("oracle", e))?;
    let tol = 2.0 * (ctx.grid.h_max() + o.h);
    st.result("pde", fmt_num(pde));
    st.result("lattice", fmt_num(lat));
    st.check("dual-solver agreement", (pde - lat).abs() <= tol, format!("|{pde:.6} - {lat:.6}| <= {tol}"));
    let mut csv = format!("method,value,std_err\npde,{pde},0\nlattice,{lat},0\n");
    let driverless = ctx.model.f().is_zero() && ctx.model.g().is_zero();
    if o.n_paths > 0 && driverless {
        let search = ScenarioSearch {
            horizon: b.horizon,
            intervals: o.intervals,
            levels: Vec::new(),
            substeps: o.substeps,
            n_paths: o.n_paths,
            seed: ctx.cfg.seed,
        };
        let sv = upper_expectation_scenarios(&ctx.model, &payoff, &b.x, &search)
            .map_err(|e| CliError::numerical("oracle", e))?;
        st.result("open-loop scenarios", format!("{} (std err {:.2e})", fmt_num(sv.value), sv.std_err));
        st.result("best levels", format!("{:?}", sv.levels));
        st.check(
            "open-loop <= adapted",
            sv.value <= lat + 3.0 * sv.std_err + tol,
            format!("{:.6} <= {lat:.6} + band", sv.value),
        );
        let _ = writeln!(csv, "scenarios,{},{}", sv.value, sv.std_err);
    }
    ctx.write(&mut st, "oracle.csv", &csv)?;
    Ok(st)
}

fn stage_control(ctx: &Ctx) -> Result<Stage, CliError> {
    let mut st = Stage::new("control");
    let block = ctx
        .cfg
        .control
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [control] block".into()))?;
    let c = ctx.cfg.control_spec(&ctx.model)?;
    let (_, sol) = ctx.ergodic()?;
    let fb = optimal_feedback(&c, sol, &ctx.model, &ctx.grid).map_err(|e| CliError::numerical("control", e))?;
    let w = ctx.grid.axes()[0].hi();
    let params = LatticeParams::new(-w, w, block.lattice_h);
    let x = vec![0.0; ctx.model.n()];
    let j = evaluate_j(&ctx.model, &c, &fb, &x, &block.horizons, &params)
        .map_err(|e| CliError::numerical("control", e))?;
    let lambda = sol.lambda;
    let rel = ctx.cfg.expect.control_rel.unwrap_or(DEFAULT_CONTROL_REL);
    st.result("lambda", fmt_num(lambda));
    st.result("J(u*)", fmt_num(j.estimate));
    st.result("gap", format!("{:+.3e}", j.gap(lambda)));
    st.check(
        "optimal cost",
        j.gap(lambda).abs() <= rel * lambda.abs().max(1e-12),
        format!("|J(u*) - lambda| <= {rel} |lambda|"),
    );
    let mut csv = String::from("feedback,T,J\n");
    for (t, v) in &j.per_horizon {
        let _ = writeln!(csv, "optimal,{t},{v}");
    }
    if block.random_feedbacks > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
        let k = c.controls.len();
        let mut worst = f64::INFINITY;
        for r in 0..block.random_feedbacks {
            let idx = (0..ctx.grid.len()).map(|_| rng.random_range(0..k)).collect();
            let table = FeedbackTable::new(ctx.grid.clone(), idx, c.controls.clone())
                .map_err(|e| CliError::numerical("control", e))?;
            let jr = evaluate_j(&ctx.model, &c, &table, &x, &block.horizons, &params)
                .map_err(|e| CliError::numerical("control", e))?;
            worst = worst.min(jr.estimate);
            for (t, v) in &jr.per_horizon {
                let _ = writeln!(csv, "random{r},{t},{v}");
            }
        }
        st.result("min J over random feedbacks", fmt_num(worst));
        st.check(
            "lower bound",
            worst >= lambda - rel * lambda.abs(),
            format!("{worst:.6} >= lambda - {rel} |lambda|"),
        );
    }
    ctx.write(&mut st, "feedback.csv", &fb.to_csv())?;
    ctx.write(&mut st, "control.csv", &csv)?;
    Ok(st)
}

fn stage_cross(ctx: &Ctx) -> Result<Stage, CliError> {
    let mut st = Stage::new("cross-method");
    let (p, sol) = ctx.ergodic()?;
    let e = &ctx.cfg.ergodic;
    let rel = ctx.cfg.expect.cross_rel.unwrap_or(DEFAULT_CROSS_REL);
    let x0 = vec![0.0; ctx.model.n()];
    let (lt, _) = large_time(p, &Field::constant(&ctx.grid, 0.0), &e.horizons, &x0, &ctx.grid)
        .map_err(|err| CliError::numerical("cross-method", err))?;
    let scale = sol.lambda.abs().max(1e-12);
    st.result("vanishing discount", fmt_num(sol.lambda));
    st.result("large time", fmt_num(lt));
    st.check(
        "large time vs vanishing discount",
        (lt - sol.lambda).abs() <= rel * scale,
        format!("rel diff {:.3e} <= {rel}", (lt - sol.lambda).abs() / scale),
    );
    if ctx.model.n() == 1 {
        let u = lambda_uniqueness_check(p, sol, &[-1.0, 0.0, 1.0], &e.horizons, rel * scale)
            .map_err(|err| CliError::numerical("cross-method", err))?;
        st.result("lambda by starting point", format!("{:?}", u.estimates));
        st.result("residual shift defect", format!("{:.3e}", u.shift_defect));
        st.check("starting-point independence", u.agree, format!("max deviation {:.3e}", u.max_deviation));
    }
    if !ctx.model.drivers_use_z() {
        let at = abelian_tauberian_check(p, sol.lambda, &x0, &ctx.cfg.schedule()?, &e.horizons, &ctx.grid, rel)
            .map_err(|err| CliError::numerical("cross-method", err))?;
        st.result("discounted limit", fmt_num(at.discounted_limit));
        st.result("time average", fmt_num(at.time_average));
        st.check("abelian-tauberian", at.agree, format!("both within {rel} of lambda"));
    }
    Ok(st)
}

fn stage_ebsde(ctx: &Ctx) -> Result<Stage, CliError> {
    let mut st = Stage::new("ebsde");
    let (p, sol) = ctx.ergodic()?;
    let v = &ctx.cfg.verify;
    let wc = WorstCaseVolatility::new(p, sol, v.horizon, v.steps).map_err(|e| CliError::numerical("ebsde", e))?;
    let x0 = vec![0.0; ctx.model.n()];
    let s = ebsde_verify(p, sol, &wc, &x0, v.n_paths, ctx.cfg.seed, v.k_tol, v.keep_paths)
        .map_err(|e| CliError::numerical("ebsde", e))?;
    let closure = ctx.cfg.expect.closure.unwrap_or(DEFAULT_CLOSURE);
    st.result("mean K_T", format!("{:.6e} (std err {:.2e})", s.mean_k, s.std_err_k));
    st.result("closure error", format!("{:.6e}", s.closure_error));
    st.result("decreasing fraction", format!("{:.4}", s.decreasing_fraction));
    st.check("worst-case closure", s.closure_error <= closure, format!("|E K_T|/T <= {closure}"));
    ctx.write(&mut st, "ebsde.csv", &s.to_csv())?;
    let mut rows = String::from("path_id,t,y,z,k\n");
    for (i, r) in s.samples.iter().enumerate() {
        for (k, t) in r.times.iter().enumerate() {
            let _ = writeln!(rows, "{i},{t},{},{},{}", r.y[k], r.z[k], r.k[k]);
        }
    }
    ctx.write(&mut st, "ebsde_paths.csv", &rows)?;
    let bundle = simulate_controlled(&ctx.model, &wc, &x0, v.keep_paths.max(1), ctx.cfg.seed)
        .map_err(|e| CliError::numerical("ebsde", e))?;
    ctx.write(&mut st, "paths.csv", &bundle.to_csv())?;
    Ok(st)
}

type StageFn = fn(&Ctx) -> Result<Stage, CliError>;

fn plan(cmd: Command, cfg: &RunConfig, model: &ModelSpec) -> Vec<StageFn> {
    match cmd {
        Command::Check => vec![stage_check],
        Command::Parabolic => vec![stage_parabolic],
        Command::Elliptic => vec![stage_elliptic],
        Command::Discounted => vec![stage_discounted],
        Command::Ergodic => vec![stage_ergodic],
        Command::LargeTime => vec![stage_large_time],
        Command::Oracle => vec![stage_oracle],
        Command::Control => vec![stage_ergodic, stage_control],
        Command::Verify => {
            let mut v: Vec<StageFn> = vec![stage_ergodic, stage_cross, stage_ebsde];
            if cfg.parabolic.is_some() {
                v.push(stage_oracle);
            }
            v
        }
        Command::Report => {
            let mut v: Vec<StageFn> = vec![stage_check];
            if cfg.parabolic.is_some() {
                v.push(stage_parabolic);
                v.push(stage_oracle);
            }
            if model.constants().mu > 0.0 {
                v.push(stage_elliptic);
            }
            if cfg.discounted.is_some() {
                v.push(stage_discounted);
            }
            if !model.drivers_use_y() && model.constants().eta > 0.0 {
                v.push(stage_ergodic);
                v.push(stage_large_time);
            }
            if cfg.control.is_some() {
                v.push(stage_control);
            }
            v
        }
    }
}

/// Load the config, run the stages of `cmd`, write `report.txt` and the
/// CSV artifacts into the output directory.
pub fn run(cmd: Command, config_path: &Path, overrides: &Overrides) -> Result<RunReport, CliError> {
    let bytes = fs::read(config_path).map_err(|source| CliError::Io {
        path: config_path.display().to_string(),
        source,
    })?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Config("config is not valid UTF-8".into()))?;
    let mut cfg = RunConfig::parse(&text)?;
    cfg.apply(overrides);
    let model = cfg.model()?;
    let grid = cfg.grid(model.n())?;
    let out = PathBuf::from(&cfg.output.dir);
    fs::create_dir_all(&out).map_err(|source| CliError::Io {
        path: out.display().to_string(),
        source,
    })?;
    let stages = plan(cmd, &cfg, &model);
    let ctx = Ctx {
        model,
        grid,
        out,
        ergodic: OnceCell::new(),
        cfg,
    };
    let mut report = RunReport {
        command: cmd.name().into(),
        config_path: config_path.display().to_string(),
        config_hash: config_hash(&bytes),
        seed: ctx.cfg.seed,
        overrides: overrides.describe(),
        stages: Vec::new(),
    };
    for stage in stages {
        let t = Instant::now();
        let mut st = stage(&ctx)?;
        st.seconds = t.elapsed().as_secs_f64();
        report.stages.push(st);
    }
    let mut dummy = Stage::new("report");
    ctx.write(&mut dummy, "report.txt", &report.render())?;
    Ok(report)
}
