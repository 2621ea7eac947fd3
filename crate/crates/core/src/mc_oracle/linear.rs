use crate::error::OracleError;
use crate::expr::Expression;
use crate::gcalculus::UncertaintyInterval;

use super::lattice::{tabulate, Lattice, LatticeParams};

/// Constant-coefficient linear drivers
/// `f = a y + b z + m` and `g = c y + d z + n` with payoff `xi(B_T)`.
#[derive(Debug, Clone)]
pub struct LinearDriver {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub m: f64,
    pub n: f64,
    /// Payoff in the variable `x`, standing for `B_T`.
    pub payoff: Expression,
    pub interval: UncertaintyInterval,
    /// Bound on `|b|` and `|d|`.
    pub alpha2: f64,
}

/// `Y_0` of the linear G-BSDE through its explicit representation
///
/// ```text
/// Y_0 = sup E[ X_T xi + int m X_s ds + int n X_s d<B>_s ],
/// X_t = exp((a - b d) t + c <B>_t) E(d B)_t E(b B~)_t,
/// ```
///
/// with the auxiliary `dB~ = v^{-1} dB`, maximized over the volatility
/// level step by step on a lattice for `B`.
pub fn linear_bsde_explicit(
    ld: &LinearDriver,
    horizon: f64,
    params: &LatticeParams,
) -> Result<f64, OracleError> {
    for (name, val) in [("b", ld.b), ("d", ld.d)] {
        if !val.is_finite() || val.abs() > ld.alpha2 {
            return Err(OracleError::CoefficientBound(format!(
                "|{name}| = {} exceeds alpha2 = {}",
                val.abs(),
                ld.alpha2
            )));
        }
    }
    let grid = params.grid()?;
    let xs: Vec<f64> = (0..grid.len()).map(|i| grid.node(i)[0]).collect();
    let len = xs.len();
    let lat = Lattice::from_tables(
        xs,
        vec![0.0; len],
        vec![0.0; len],
        vec![1.0; len],
        &ld.interval,
        params,
        horizon,
    )?;
    let terminal = tabulate(&lat.xs, &ld.payoff)?;
    let dt = lat.dt;
    let node = |_: usize, v: f64, br: &[super::lattice::Branch; 3]| -> Result<f64, OracleError> {
        let base = (ld.a - ld.b * ld.d) * dt + ld.c * v * dt
            - 0.5 * (ld.d * ld.d * v + ld.b * ld.b / v) * dt;
        let slope = ld.d + ld.b / v;
        let growth: f64 = br
            .iter()
            .map(|b| b.p * (base + slope * b.dx).exp() * b.w)
            .sum();
        Ok(growth + (ld.m + ld.n * v) * dt)
    };
    let w = lat.solve(terminal, &node)?;
    let field =
        crate::pde::Field::new(grid, w).map_err(|e| OracleError::InvalidArgument(e.to_string()))?;
    field
        .interpolate(&[0.0])
        .map_err(|e| OracleError::InvalidArgument(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ld(a: f64, b: f64, c: f64, d: f64, payoff: &str) -> LinearDriver {
        LinearDriver {
            a,
            b,
            c,
            d,
            m: 0.0,
            n: 0.0,
            payoff: Expression::parse(payoff).unwrap(),
            interval: UncertaintyInterval::scalar(1.0, 4.0).unwrap(),
            alpha2: 1.0,
        }
    }

    #[test]
    fn reduces_to_g_heat() {
        let params = LatticeParams::new(-10.0, 10.0, 0.05);
        let y = linear_bsde_explicit(&ld(0.0, 0.0, 0.0, 0.0, "x^2"), 1.0, &params).unwrap();
        assert!((y - 4.0).abs() < 1e-3, "{y}");
    }

    #[test]
    fn pure_discounting() {
        let params = LatticeParams::new(-4.0, 4.0, 0.1);
        let y = linear_bsde_explicit(&ld(-1.0, 0.0, 0.0, 0.0, "1"), 1.5, &params).unwrap();
        assert!((y - (-1.5f64).exp()).abs() < 1e-12, "{y}");
    }

    #[test]
    fn running_terms() {
        // a = 0, xi = 0: Y0 = sup E int (m + n v) ds = (m + n hi) T for n > 0.
        let mut d = ld(0.0, 0.0, 0.0, 0.0, "0");
        d.m = 0.5;
        d.n = 0.25;
        let params = LatticeParams::new(-4.0, 4.0, 0.1);
        let y = linear_bsde_explicit(&d, 2.0, &params).unwrap();
        assert!((y - 2.0 * (0.5 + 0.25 * 4.0)).abs() < 1e-10);
    }

    #[test]
    fn gradient_drift_shifts_the_mean() {
        // f = b z with classical volatility: Y0 = E[B_T + b T] = b T.
        let mut d = ld(0.0, 0.5, 0.0, 0.0, "x");
        d.interval = UncertaintyInterval::classical(1.0).unwrap();
        let params = LatticeParams::new(-8.0, 8.0, 0.05);
        let y = linear_bsde_explicit(&d, 1.0, &params).unwrap();
        assert!((y - 0.5).abs() < 2e-3, "{y}");
    }

    #[test]
    fn bound_is_enforced() {
        let params = LatticeParams::new(-4.0, 4.0, 0.1);
        assert!(matches!(
            linear_bsde_explicit(&ld(0.0, 2.0, 0.0, 0.0, "x"), 1.0, &params),
            Err(OracleError::CoefficientBound(_))
        ));
    }
}
