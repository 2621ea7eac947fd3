use std::sync::OnceLock;

use gebsde::ergodic::{
    ebsde_verify, implied_lambda, lambda_uniqueness_check, relax, vanishing_discount,
    DiscountSchedule, ErgodicProblem, ErgodicSolution, WorstCaseVolatility,
};
use gebsde::mc_oracle::{Scenario, VolatilityControl};
use gebsde::models::{check_assumptions, parse_model, SamplingPlan, Verdict};
use gebsde::pde::Grid;

const OU: &str = r#"
[model]
b = "-x"
sigma = "1"
f = "1/(1+x^2)"
L = 1.0
alpha = 1.0
eta = 1.0

[uncertainty]
sigma_lo_sq = 1.0
sigma_hi_sq = 4.0
"#;

fn solved() -> &'static (ErgodicProblem, ErgodicSolution) {
    static CELL: OnceLock<(ErgodicProblem, ErgodicSolution)> = OnceLock::new();
    CELL.get_or_init(|| {
        let m = parse_model(OU).unwrap();
        let p = ErgodicProblem::standard(m).unwrap();
        let grid = Grid::centered(1, 8.0, 0.1).unwrap();
        let s = vanishing_discount(&p, &DiscountSchedule::default(), &grid, 1e-5).unwrap();
        let r = relax(&p, &s, 1e-10).unwrap();
        (p, r)
    })
}

#[test]
fn config_model_satisfies_assumptions() {
    let m = parse_model(OU).unwrap();
    let rep = check_assumptions(&m, &SamplingPlan::around_origin(1, 4.0)).unwrap();
    assert!(rep.checks.iter().all(|c| c.verdict != Verdict::Violated), "{rep}");
}

#[test]
fn three_lambdas_agree() {
    let (p, sol) = solved();
    let implied = implied_lambda(p, &sol.v).unwrap();
    assert!((implied - sol.lambda).abs() < 1e-8, "{implied} vs {}", sol.lambda);
    let rep = lambda_uniqueness_check(p, sol, &[-1.0, 0.0, 1.0], &[4.0, 8.0, 16.0], 0.01).unwrap();
    assert!(rep.agree, "{rep:?}");
    assert!(rep.shift_defect < 1e-9, "{rep:?}");
}

#[test]
fn worst_case_scenario_closes_k() {
    let (p, sol) = solved();
    let wc = WorstCaseVolatility::new(p, sol, 4.0, 2000).unwrap();
    let s = ebsde_verify(p, sol, &wc, &[0.0], 2000, 7, 0.05, 4).unwrap();
    // dK is O(h + dt) per unit time along the worst case.
    assert!(s.closure_error < 0.02, "{s:?}");
    assert_eq!(s.samples.len(), 4);
}

#[test]
fn sub_optimal_scenario_has_decreasing_k() {
    let (p, sol) = solved();
    let wc = WorstCaseVolatility::new(p, sol, 4.0, 2000).unwrap();
    // v is concave near the origin, where the worst case is the lower level;
    // pin the upper one everywhere.
    assert_eq!(wc.level(0, &[0.0]), 1.0);
    let high = Scenario::constant(4.0, 4.0, 2000).unwrap();
    let s = ebsde_verify(p, sol, &high, &[0.0], 2000, 7, 0.05, 0).unwrap();
    assert!(s.mean_k + 3.0 * s.std_err_k < 0.0, "{s:?}");
    let mean_path = &s.mean_k_path;
    assert!(mean_path[mean_path.len() - 1] < mean_path[mean_path.len() / 2]);
}
