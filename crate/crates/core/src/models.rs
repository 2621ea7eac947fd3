//! Coefficient bundles `(b, h, sigma, f, g)` with their structural constants,
//! config ingestion, and sampled checks of the standing assumptions.

use std::fmt;

use serde::Deserialize;

use crate::control::ControlSpec;
use crate::error::ModelError;
use crate::expr::{EvalError, Expression, Scope, Vars};
use crate::gcalculus::{GFunction, UncertaintyInterval};

/// Structural constants declared alongside a model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
pub struct Constants {
    /// Joint Lipschitz constant `L` of `b, h, f, g` in `(x, y)`.
    #[serde(rename = "L", default)]
    pub lipschitz: f64,
    /// Bound on `|f(x,0,0)| + 2G(|g(x,0,0)|)`; also serves as the
    /// infinite-horizon driver bound.
    #[serde(default)]
    pub alpha: f64,
    /// Lipschitz constant of `sigma`.
    #[serde(default)]
    pub alpha1: f64,
    /// Lipschitz constant of `f, g` in `z`.
    #[serde(default)]
    pub alpha2: f64,
    /// Monotonicity constant in `y`.
    #[serde(default)]
    pub mu: f64,
    /// Forward dissipativity constant.
    #[serde(default)]
    pub eta: f64,
}

impl Constants {
    fn validate(&self) -> Result<(), ModelError> {
        let named = [
            ("L", self.lipschitz),
            ("alpha", self.alpha),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("mu", self.mu),
            ("eta", self.eta),
        ];
        for (name, value) in named {
            if !value.is_finite() || value < 0.0 {
                return Err(ModelError::InvalidConstant { name, value });
            }
        }
        Ok(())
    }

    /// Lipschitz bound `M` on the elliptic solution:
    /// `(1 + hi) L / (eta - (1 + hi) alpha1 alpha2)`, infinite when the
    /// dissipativity margin is not positive.
    pub fn lipschitz_bound(&self, sigma_hi_sq: f64) -> f64 {
        let denom = self.eta - (1.0 + sigma_hi_sq) * self.alpha1 * self.alpha2;
        if denom > 0.0 {
            (1.0 + sigma_hi_sq) * self.lipschitz / denom
        } else {
            f64::INFINITY
        }
    }
}

/// Pointwise minimum over a finite control set of `kappa(x,u) + R(u) z`.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    controls: Vec<Vec<f64>>,
    kappa: Expression,
    r_values: Vec<Vec<f64>>,
}

impl Hamiltonian {
    pub fn controls(&self) -> &[Vec<f64>] {
        &self.controls
    }

    pub fn kappa(&self) -> &Expression {
        &self.kappa
    }

    /// `R(u)` for every control, in control order.
    pub fn r_values(&self) -> &[Vec<f64>] {
        &self.r_values
    }

    pub fn kappa_at(&self, x: &[f64], index: usize) -> Result<f64, EvalError> {
        self.kappa.eval(&Vars::xu(x, &self.controls[index]))
    }

    /// Minimum value and the lowest index attaining it.
    pub fn argmin(&self, x: &[f64], z: &[f64]) -> Result<(f64, usize), EvalError> {
        let mut best = (f64::INFINITY, 0);
        for (k, r) in self.r_values.iter().enumerate() {
            let val = self.kappa_at(x, k)? + dot(r, z);
            if val < best.0 {
                best = (val, k);
            }
        }
        Ok(best)
    }

    pub fn eval(&self, x: &[f64], z: &[f64]) -> Result<f64, EvalError> {
        self.argmin(x, z).map(|(v, _)| v)
    }

    /// Largest `|R(u)|` over the control set.
    pub fn r_norm(&self) -> f64 {
        self.r_values
            .iter()
            .map(|r| dot(r, r).sqrt())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Build the ergodic-control driver `f(x,z) = min_u (kappa(x,u) + R(u) z)`.
pub fn hamiltonian_from_control(c: &ControlSpec) -> Result<Hamiltonian, ModelError> {
    if c.controls.is_empty() {
        return Err(ModelError::EmptyControlSet);
    }
    let mut r_values = Vec::with_capacity(c.controls.len());
    for u in &c.controls {
        let vals = c
            .r
            .iter()
            .map(|e| {
                e.eval(&Vars::xu(&[], u))
                    .map_err(|source| ModelError::Evaluation {
                        field: "R".into(),
                        point: u.clone(),
                        source,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        r_values.push(vals);
    }
    Ok(Hamiltonian {
        controls: c.controls.clone(),
        kappa: c.kappa.clone(),
        r_values,
    })
}

/// A BSDE driver: either a coefficient expression in `(x, y, z)` or a
/// control Hamiltonian in `(x, z)`.
#[derive(Debug, Clone)]
pub enum Driver {
    Expr(Expression),
    Hamiltonian(Hamiltonian),
}

impl Driver {
    pub fn zero() -> Self {
        Driver::Expr(Expression::constant(0.0))
    }

    pub fn eval(&self, x: &[f64], y: f64, z: &[f64]) -> Result<f64, EvalError> {
        match self {
            Driver::Expr(e) => e.eval(&Vars::xyz(x, y, z)),
            Driver::Hamiltonian(h) => h.eval(x, z),
        }
    }

    pub fn uses_y(&self) -> bool {
        match self {
            Driver::Expr(e) => e.uses_y(),
            Driver::Hamiltonian(_) => false,
        }
    }

    pub fn uses_z(&self) -> bool {
        match self {
            Driver::Expr(e) => e.uses_z(),
            Driver::Hamiltonian(h) => h.r_norm() > 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Driver::Expr(e) if e.root() == &crate::expr::Node::Num(0.0))
    }
}

impl fmt::Display for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Driver::Expr(e) => write!(f, "{e}"),
            Driver::Hamiltonian(h) => {
                write!(f, "min over {} controls of ({}) + R(u) z", h.controls.len(), h.kappa)
            }
        }
    }
}

/// Affine-in-`y` terms added to the drivers without re-parsing:
/// `f + y_dt y + c_dt` and `g + y_qv y + c_qv`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DriverShift {
    pub y_dt: f64,
    pub y_qv: f64,
    pub c_dt: f64,
    pub c_qv: f64,
}

/// A Markovian forward-backward model with `n` state and `d = 1` Brownian
/// coordinates.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    n: usize,
    d: usize,
    b: Vec<Expression>,
    h: Vec<Expression>,
    sigma: Vec<Expression>,
    f: Driver,
    g: Driver,
    constants: Constants,
    g_fun: GFunction,
    shift: DriverShift,
}

impl ModelSpec {
    pub fn builder() -> ModelBuilder {
        ModelBuilder::default()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn b(&self) -> &[Expression] {
        &self.b
    }

    pub fn h(&self) -> &[Expression] {
        &self.h
    }

    /// Diffusion matrix entries, row-major `n x d`.
    pub fn sigma(&self) -> &[Expression] {
        &self.sigma
    }

    pub fn f(&self) -> &Driver {
        &self.f
    }

    pub fn g(&self) -> &Driver {
        &self.g
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    pub fn g_fun(&self) -> &GFunction {
        &self.g_fun
    }

    pub fn interval(&self) -> &UncertaintyInterval {
        self.g_fun.interval()
    }

    pub fn shift(&self) -> &DriverShift {
        &self.shift
    }

    pub fn with_constants(mut self, constants: Constants) -> Self {
        self.constants = constants;
        self
    }

    pub fn with_interval(mut self, interval: UncertaintyInterval) -> Self {
        self.g_fun = GFunction::new(interval);
        self
    }

    pub fn with_f(mut self, f: Driver) -> Self {
        self.f = f;
        self
    }

    pub fn with_g(mut self, g: Driver) -> Self {
        self.g = g;
        self
    }

    /// Add the discount terms `gamma1 eps y` to `f` and `gamma2 eps y` to
    /// `g`. The monotonicity constant grows by `-(gamma1 + 2G(gamma2)) eps`.
    pub fn discounted(&self, gamma1: f64, gamma2: f64, eps: f64) -> Self {
        let mut m = self.clone();
        m.shift.y_dt += gamma1 * eps;
        m.shift.y_qv += gamma2 * eps;
        let rate = -(gamma1 + 2.0 * self.g_fun.scalar(gamma2)) * eps;
        m.constants.mu += rate;
        m
    }

    /// Add the ergodic constant terms `gamma1 lambda` to `f` and
    /// `gamma2 lambda` to `g`.
    pub fn with_lambda(&self, gamma1: f64, gamma2: f64, lambda: f64) -> Self {
        let mut m = self.clone();
        m.shift.c_dt += gamma1 * lambda;
        m.shift.c_qv += gamma2 * lambda;
        m
    }

    /// Add a constant to `f`.
    pub fn with_f_offset(&self, c: f64) -> Self {
        let mut m = self.clone();
        m.shift.c_dt += c;
        m
    }

    fn eval_all(
        exprs: &[Expression],
        field: &str,
        x: &[f64],
    ) -> Result<Vec<f64>, ModelError> {
        exprs
            .iter()
            .map(|e| {
                e.eval(&Vars::x(x)).map_err(|source| ModelError::Evaluation {
                    field: field.to_string(),
                    point: x.to_vec(),
                    source,
                })
            })
            .collect()
    }

    pub fn drift_at(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        Self::eval_all(&self.b, "b", x)
    }

    pub fn h_at(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        Self::eval_all(&self.h, "h", x)
    }

    pub fn sigma_at(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        Self::eval_all(&self.sigma, "sigma", x)
    }

    /// `f` including any shift.
    pub fn f_at(&self, x: &[f64], y: f64, z: &[f64]) -> Result<f64, ModelError> {
        let v = self.f.eval(x, y, z).map_err(|source| ModelError::Evaluation {
            field: "f".into(),
            point: probe_point(x, y, z),
            source,
        })?;
        Ok(v + self.shift.y_dt * y + self.shift.c_dt)
    }

    /// `g` including any shift.
    pub fn g_at(&self, x: &[f64], y: f64, z: &[f64]) -> Result<f64, ModelError> {
        let v = self.g.eval(x, y, z).map_err(|source| ModelError::Evaluation {
            field: "g".into(),
            point: probe_point(x, y, z),
            source,
        })?;
        Ok(v + self.shift.y_qv * y + self.shift.c_qv)
    }

    pub fn drivers_use_y(&self) -> bool {
        self.f.uses_y() || self.g.uses_y() || self.shift.y_dt != 0.0 || self.shift.y_qv != 0.0
    }

    pub fn drivers_use_z(&self) -> bool {
        self.f.uses_z() || self.g.uses_z()
    }

    /// `eta - (1 + hi) alpha1 alpha2`, positive when the ergodic theory applies.
    pub fn ergodic_margin(&self) -> f64 {
        let c = &self.constants;
        c.eta - (1.0 + self.interval().sigma_hi_sq()) * c.alpha1 * c.alpha2
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.constants.lipschitz_bound(self.interval().sigma_hi_sq())
    }
}

fn probe_point(x: &[f64], y: f64, z: &[f64]) -> Vec<f64> {
    let mut p = x.to_vec();
    p.push(y);
    p.extend_from_slice(z);
    p
}

/// String-level builder; parsing happens in [`ModelBuilder::build`].
#[derive(Debug, Clone, Default)]
pub struct ModelBuilder {
    n: Option<usize>,
    b: Option<Vec<String>>,
    h: Option<Vec<String>>,
    sigma: Option<Vec<String>>,
    f: Option<String>,
    g: Option<String>,
    f_driver: Option<Driver>,
    interval: Option<UncertaintyInterval>,
    constants: Constants,
}

impl ModelBuilder {
    pub fn b<I, S>(mut self, b: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.b = Some(b.into_iter().map(Into::into).collect());
        self
    }

    pub fn h<I, S>(mut self, h: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.h = Some(h.into_iter().map(Into::into).collect());
        self
    }

    /// Diffusion rows (one entry per state coordinate, since `d = 1`).
    pub fn sigma<I, S>(mut self, sigma: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.sigma = Some(sigma.into_iter().map(Into::into).collect());
        self
    }

    pub fn f(mut self, f: impl Into<String>) -> Self {
        self.f = Some(f.into());
        self
    }

    pub fn f_driver(mut self, f: Driver) -> Self {
        self.f_driver = Some(f);
        self
    }

    pub fn g(mut self, g: impl Into<String>) -> Self {
        self.g = Some(g.into());
        self
    }

    pub fn n(mut self, n: usize) -> Self {
        self.n = Some(n);
        self
    }

    pub fn interval(mut self, interval: UncertaintyInterval) -> Self {
        self.interval = Some(interval);
        self
    }

    pub fn volatility(self, sigma_lo_sq: f64, sigma_hi_sq: f64) -> Self {
        let iv = UncertaintyInterval::scalar(sigma_lo_sq, sigma_hi_sq)
            .expect("invalid volatility interval");
        self.interval(iv)
    }

    pub fn constants(mut self, constants: Constants) -> Self {
        self.constants = constants;
        self
    }

    pub fn build(self) -> Result<ModelSpec, ModelError> {
        let b = self.b.ok_or_else(|| ModelError::MissingCoefficient("b".into()))?;
        let n = self.n.unwrap_or(b.len());
        if n == 0 || n > 2 {
            return Err(ModelError::Dimension(format!(
                "state dimension n = {n} (supported: 1 or 2)"
            )));
        }
        let d = 1;
        let sigma = self
            .sigma
            .ok_or_else(|| ModelError::MissingCoefficient("sigma".into()))?;
        let h = self.h.unwrap_or_else(|| vec!["0".to_string(); n]);
        if b.len() != n || h.len() != n {
            return Err(ModelError::Dimension(format!(
                "b has {} and h has {} components, expected n = {n}",
                b.len(),
                h.len()
            )));
        }
        if sigma.len() != n * d {
            return Err(ModelError::Dimension(format!(
                "sigma has {} entries, expected n*d = {}",
                sigma.len(),
                n * d
            )));
        }
        let x_scope = Scope {
            n,
            ..Default::default()
        };
        let drv_scope = Scope {
            n,
            y: true,
            d,
            m: 0,
        };
        let parse_vec = |name: &str, src: &[String]| -> Result<Vec<Expression>, ModelError> {
            src.iter()
                .enumerate()
                .map(|(i, s)| {
                    Expression::parse_in(s, x_scope).map_err(|source| ModelError::Expression {
                        field: format!("{name}[{}]", i + 1),
                        source,
                    })
                })
                .collect()
        };
        let b = parse_vec("b", &b)?;
        let h = parse_vec("h", &h)?;
        let sigma = parse_vec("sigma", &sigma)?;
        let f = match (self.f_driver, self.f) {
            (Some(drv), _) => drv,
            (None, Some(s)) => Driver::Expr(Expression::parse_in(&s, drv_scope).map_err(
                |source| ModelError::Expression {
                    field: "f".into(),
                    source,
                },
            )?),
            (None, None) => return Err(ModelError::MissingCoefficient("f".into())),
        };
        let g = match self.g {
            Some(s) => Driver::Expr(Expression::parse_in(&s, drv_scope).map_err(|source| {
                ModelError::Expression {
                    field: "g".into(),
                    source,
                }
            })?),
            None => Driver::zero(),
        };
        self.constants.validate()?;
        let interval = match self.interval {
            Some(iv) => iv,
            None => UncertaintyInterval::classical(1.0)?,
        };
        if interval.dim() != d {
            return Err(ModelError::Dimension(format!(
                "uncertainty interval has dimension {}, model has d = {d}",
                interval.dim()
            )));
        }
        if let Driver::Hamiltonian(hm) = &f {
            let a2 = self.constants.alpha2;
            if hm.r_norm() > a2 + 1e-12 {
                return Err(ModelError::ControlBound {
                    index: 0,
                    norm: hm.r_norm(),
                    alpha2: a2,
                });
            }
        }
        Ok(ModelSpec {
            n,
            d,
            b,
            h,
            sigma,
            f,
            g,
            constants: self.constants,
            g_fun: GFunction::new(interval),
            shift: DriverShift::default(),
        })
    }
}

// Config ingestion ---------------------------------------------------------------

/// A string, or a list of strings.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    pub fn into_vec(self) -> Vec<String> {
        match self {
            OneOrMany::One(s) => vec![s],
            OneOrMany::Many(v) => v,
        }
    }
}

/// Diffusion matrix in config: a single string, one string per row, or
/// nested rows.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    One(String),
    Rows(Vec<String>),
    Nested(Vec<Vec<String>>),
}

impl MatrixSpec {
    fn flatten(self) -> Vec<String> {
        match self {
            MatrixSpec::One(s) => vec![s],
            MatrixSpec::Rows(v) => v,
            MatrixSpec::Nested(rows) => rows.into_iter().flatten().collect(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ModelBlock {
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub b: Option<OneOrMany>,
    pub h: Option<OneOrMany>,
    pub sigma: Option<MatrixSpec>,
    pub f: Option<String>,
    pub g: Option<String>,
    #[serde(flatten)]
    pub constants: Constants,
}

#[derive(Debug, Clone, Deserialize)]
pub struct UncertaintyBlock {
    pub sigma_lo_sq: f64,
    pub sigma_hi_sq: f64,
    #[serde(default = "one")]
    pub d: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
pub struct ControlBlock {
    /// Control points, one list per control.
    pub controls: Vec<Vec<f64>>,
    pub kappa: String,
    #[serde(rename = "R")]
    pub r: OneOrMany,
}

impl ControlBlock {
    pub fn to_spec(&self, n: usize, d: usize) -> Result<ControlSpec, ModelError> {
        let m = self.controls.first().map_or(0, Vec::len);
        if self.controls.iter().any(|u| u.len() != m) {
            return Err(ModelError::Dimension(
                "control points have differing lengths".into(),
            ));
        }
        let kappa = Expression::parse_in(
            &self.kappa,
            Scope {
                n,
                y: false,
                d: 0,
                m,
            },
        )
        .map_err(|source| ModelError::Expression {
            field: "kappa".into(),
            source,
        })?;
        let r_src = self.r.clone().into_vec();
        if r_src.len() != d {
            return Err(ModelError::Dimension(format!(
                "R has {} components, expected d = {d}",
                r_src.len()
            )));
        }
        let r = r_src
            .iter()
            .map(|s| {
                Expression::parse_in(
                    s,
                    Scope {
                        n: 0,
                        y: false,
                        d: 0,
                        m,
                    },
                )
                .map_err(|source| ModelError::Expression {
                    field: "R".into(),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        ControlSpec::new(self.controls.clone(), kappa, r)
    }
}

#[derive(Debug, Clone, Deserialize)]
struct ModelDocument {
    model: Option<ModelBlock>,
    uncertainty: Option<UncertaintyBlock>,
    control: Option<ControlBlock>,
}

/// Deserialize TOML, or JSON when the text starts with `{`.
pub fn from_config_text<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, ModelError> {
    if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| {
            ModelError::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })
    } else {
        toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))
    }
}

/// Parse the `[model]`, `[uncertainty]` and optional `[control]` blocks of a
/// config document. `f = "hamiltonian"` selects the control Hamiltonian.
pub fn parse_model(config_text: &str) -> Result<ModelSpec, ModelError> {
    let doc: ModelDocument = from_config_text(config_text)?;
    let block = doc
        .model
        .ok_or_else(|| ModelError::MissingCoefficient("model".into()))?;
    model_from_blocks(block, doc.uncertainty, doc.control.as_ref())
}

pub fn model_from_blocks(
    block: ModelBlock,
    uncertainty: Option<UncertaintyBlock>,
    control: Option<&ControlBlock>,
) -> Result<ModelSpec, ModelError> {
    let d = block.d.unwrap_or(1);
    if d != 1 {
        return Err(ModelError::Dimension(format!(
            "Brownian dimension d = {d} (models support d = 1)"
        )));
    }
    let b = block
        .b
        .ok_or_else(|| ModelError::MissingCoefficient("b".into()))?
        .into_vec();
    let n = block.n.unwrap_or(b.len());
    let sigma = block
        .sigma
        .ok_or_else(|| ModelError::MissingCoefficient("sigma".into()))?
        .flatten();
    let f = block
        .f
        .ok_or_else(|| ModelError::MissingCoefficient("f".into()))?;
    let mut builder = ModelSpec::builder()
        .n(n)
        .b(b)
        .sigma(sigma)
        .constants(block.constants);
    if let Some(h) = block.h {
        builder = builder.h(h.into_vec());
    }
    if let Some(g) = block.g {
        builder = builder.g(g);
    }
    if f.trim() == "hamiltonian" {
        let c = control.ok_or_else(|| ModelError::MissingCoefficient("control".into()))?;
        let spec = c.to_spec(n, d)?;
        builder = builder.f_driver(Driver::Hamiltonian(hamiltonian_from_control(&spec)?));
    } else {
        builder = builder.f(f);
    }
    if let Some(u) = uncertainty {
        if u.d != d {
            return Err(ModelError::Dimension(format!(
                "uncertainty block has d = {}, model has d = {d}",
                u.d
            )));
        }
        builder = builder.interval(UncertaintyInterval::new(u.sigma_lo_sq, u.sigma_hi_sq, u.d)?);
    }
    builder.build()
}

// Assumption checks ------------------------------------------------------------

/// Probe box and counts for [`check_assumptions`].
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    /// Per-axis `[lo, hi]` for state probes.
    pub x_box: Vec<(f64, f64)>,
    pub x_count: usize,
    pub y_range: (f64, f64),
    pub y_count: usize,
    pub z_range: (f64, f64),
    pub z_count: usize,
}

impl SamplingPlan {
    pub fn around_origin(n: usize, half_width: f64) -> Self {
        Self {
            x_box: vec![(-half_width, half_width); n],
            x_count: if n == 1 { 41 } else { 13 },
            y_range: (-3.0, 3.0),
            y_count: 9,
            z_range: (-3.0, 3.0),
            z_count: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    HoldsOnSample,
    Violated,
    NotCheckable,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::HoldsOnSample => "holds on sample",
            Verdict::Violated => "VIOLATED",
            Verdict::NotCheckable => "not checkable numerically",
        })
    }
}

/// The worst probe: one or two labelled points.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub labels: &'static str,
    pub first: Vec<f64>,
    pub second: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub verdict: Verdict,
    /// Smallest observed slack; negative means violated.
    pub margin: f64,
    pub witness: Option<Witness>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Every checkable assumption holds on the sample.
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.verdict != Verdict::Violated)
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            write!(f, "{:<4} {:<26} margin {:+.6e}", c.name, c.verdict.to_string(), c.margin)?;
            if let Some(w) = &c.witness {
                write!(f, "  witness {} = {:?}", w.labels, w.first)?;
                if let Some(s) = &w.second {
                    write!(f, " vs {s:?}")?;
                }
            }
            if !c.note.is_empty() {
                write!(f, "  ({})", c.note)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

const SLACK: f64 = 1e-9;

struct Worst {
    margin: f64,
    witness: Option<Witness>,
}

impl Worst {
    fn new() -> Self {
        Self {
            margin: f64::INFINITY,
            witness: None,
        }
    }

    fn offer(&mut self, margin: f64, w: impl FnOnce() -> Witness) {
        if margin < self.margin {
            self.margin = margin;
            self.witness = Some(w());
        }
    }

    fn finish(self, name: &'static str, note: impl Into<String>) -> AssumptionCheck {
        let verdict = if self.margin >= -SLACK {
            Verdict::HoldsOnSample
        } else {
            Verdict::Violated
        };
        AssumptionCheck {
            name,
            verdict,
            margin: self.margin,
            witness: if verdict == Verdict::Violated {
                self.witness
            } else {
                None
            },
            note: note.into(),
        }
    }
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..count)
        .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
        .collect()
}

fn x_samples(plan: &SamplingPlan) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = plan
        .x_box
        .iter()
        .map(|&(lo, hi)| linspace(lo, hi, plan.x_count))
        .collect();
    match axes.len() {
        1 => axes[0].iter().map(|&x| vec![x]).collect(),
        _ => axes[0]
            .iter()
            .flat_map(|&a| axes[1].iter().map(move |&b| vec![a, b]))
            .collect(),
    }
}

fn norm_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Sampled secant checks of the standing assumptions. Verdicts hold on the
/// sample only.
pub fn check_assumptions(m: &ModelSpec, plan: &SamplingPlan) -> Result<AssumptionReport, ModelError> {
    if plan.x_box.len() != m.n() {
        return Err(ModelError::Dimension(format!(
            "sampling box has {} axes, model has n = {}",
            plan.x_box.len(),
            m.n()
        )));
    }
    let c = *m.constants();
    let g = *m.g_fun();
    let hi = m.interval().sigma_hi_sq();
    let xs = x_samples(plan);
    let ys = linspace(plan.y_range.0, plan.y_range.1, plan.y_count);
    let zs = linspace(plan.z_range.0, plan.z_range.1, plan.z_count);
    let zero_z = vec![0.0; m.d()];

    struct Coeffs {
        b: Vec<f64>,
        h: Vec<f64>,
        s: Vec<f64>,
    }
    let coeffs = xs
        .iter()
        .map(|x| {
            Ok(Coeffs {
                b: m.drift_at(x)?,
                h: m.h_at(x)?,
                s: m.sigma_at(x)?,
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;

    // B1 and H4: driver bound at (x, 0, 0).
    let mut b1 = Worst::new();
    let mut h4 = Worst::new();
    for x in &xs {
        let f0 = m.f_at(x, 0.0, &zero_z)?;
        let g0 = m.g_at(x, 0.0, &zero_z)?;
        let lhs = f0.abs() + 2.0 * g.scalar(g0.abs());
        b1.offer(c.alpha - lhs, || Witness {
            labels: "x",
            first: x.clone(),
            second: None,
        });
        let lhs4 = f0.abs() + hi * g0.abs();
        h4.offer(c.alpha - lhs4, || Witness {
            labels: "x",
            first: x.clone(),
            second: None,
        });
    }

    // B2: sampled Lipschitz ratios.
    let mut lip_bh = Worst::new();
    let mut lip_sigma = Worst::new();
    let mut lip_fx = Worst::new();
    let mut lip_fy = Worst::new();
    let mut lip_fz = Worst::new();
    // B4 dissipativity.
    let mut b4 = Worst::new();
    for (i, x) in xs.iter().enumerate() {
        for (j, xp) in xs.iter().enumerate().skip(i + 1) {
            let dx2 = norm_sq(x, xp);
            if dx2 == 0.0 {
                continue;
            }
            let dx = dx2.sqrt();
            let (ci, cj) = (&coeffs[i], &coeffs[j]);
            let db = norm_sq(&ci.b, &cj.b).sqrt();
            let dh: f64 = ci.h.iter().zip(&cj.h).map(|(p, q)| (p - q).abs()).sum();
            let ds = norm_sq(&ci.s, &cj.s).sqrt();
            let pair = || Witness {
                labels: "x",
                first: x.clone(),
                second: Some(xp.clone()),
            };
            lip_bh.offer(c.lipschitz - (db + dh) / dx, pair);
            lip_sigma.offer(c.alpha1 - ds / dx, pair);

            let sig_term = norm_sq(&ci.s, &cj.s);
            let h_term: f64 = x
                .iter()
                .zip(xp)
                .zip(ci.h.iter().zip(&cj.h))
                .map(|((a, b), (p, q))| (a - b) * (p - q))
                .sum();
            let b_term: f64 = x
                .iter()
                .zip(xp)
                .zip(ci.b.iter().zip(&cj.b))
                .map(|((a, b), (p, q))| (a - b) * (p - q))
                .sum();
            let lhs = g.scalar(sig_term + 2.0 * h_term) + b_term;
            b4.offer((-c.eta * dx2 - lhs) / dx2, pair);
        }
    }

    let mut b3 = Worst::new();
    for x in &xs {
        for &z in &zs {
            let zv = vec![z; m.d()];
            let fy: Vec<f64> = ys
                .iter()
                .map(|&y| m.f_at(x, y, &zv))
                .collect::<Result<_, _>>()?;
            let gy: Vec<f64> = ys
                .iter()
                .map(|&y| m.g_at(x, y, &zv))
                .collect::<Result<_, _>>()?;
            for a in 0..ys.len() {
                for bb in (a + 1)..ys.len() {
                    let dy = ys[a] - ys[bb];
                    let lhs = (fy[a] - fy[bb]) * dy + 2.0 * g.scalar((gy[a] - gy[bb]) * dy);
                    let w = || Witness {
                        labels: "(x.., z, y) vs y'",
                        first: {
                            let mut p = x.clone();
                            p.push(z);
                            p.push(ys[a]);
                            p
                        },
                        second: Some(vec![ys[bb]]),
                    };
                    b3.offer((-c.mu * dy * dy - lhs) / (dy * dy), w);
                    let ratio = ((fy[a] - fy[bb]).abs() + (gy[a] - gy[bb]).abs()) / dy.abs();
                    lip_fy.offer(c.lipschitz - ratio, w);
                }
            }
            // z-secants at fixed (x, y).
            for &y in &ys {
                for (a, &za) in zs.iter().enumerate() {
                    for &zb in zs.iter().skip(a + 1) {
                        let (va, vb) = (vec![za; m.d()], vec![zb; m.d()]);
                        let df = (m.f_at(x, y, &va)? - m.f_at(x, y, &vb)?).abs()
                            + (m.g_at(x, y, &va)? - m.g_at(x, y, &vb)?).abs();
                        lip_fz.offer(c.alpha2 - df / (za - zb).abs(), || Witness {
                            labels: "(x.., y, z) vs z'",
                            first: {
                                let mut p = x.clone();
                                p.push(y);
                                p.push(za);
                                p
                            },
                            second: Some(vec![zb]),
                        });
                    }
                }
            }
        }
    }
    // x-secants of the drivers at fixed (y, z).
    for &y in &ys {
        for &z in &zs {
            let zv = vec![z; m.d()];
            let vals: Vec<(f64, f64)> = xs
                .iter()
                .map(|x| Ok((m.f_at(x, y, &zv)?, m.g_at(x, y, &zv)?)))
                .collect::<Result<_, ModelError>>()?;
            for i in 0..xs.len() {
                for j in (i + 1)..xs.len() {
                    let dx = norm_sq(&xs[i], &xs[j]).sqrt();
                    let r = ((vals[i].0 - vals[j].0).abs() + (vals[i].1 - vals[j].1).abs()) / dx;
                    lip_fx.offer(c.lipschitz - r, || Witness {
                        labels: "x (y, z fixed)",
                        first: xs[i].clone(),
                        second: Some(xs[j].clone()),
                    });
                }
            }
        }
    }

    let b2_parts = [
        ("b, h in x", lip_bh),
        ("sigma in x", lip_sigma),
        ("f, g in x", lip_fx),
        ("f, g in y", lip_fy),
        ("f, g in z", lip_fz),
    ];
    let mut b2 = Worst::new();
    let mut b2_note = String::new();
    for (label, w) in b2_parts {
        if w.margin < b2.margin {
            b2_note = format!("tightest: {label}");
            b2.margin = w.margin;
            b2.witness = w.witness;
        }
    }

    let b5_margin = m.ergodic_margin();
    let b5 = AssumptionCheck {
        name: "B5",
        verdict: if b5_margin > 0.0 {
            Verdict::HoldsOnSample
        } else {
            Verdict::Violated
        },
        margin: b5_margin,
        witness: if b5_margin > 0.0 {
            None
        } else {
            Some(Witness {
                labels: "(eta, alpha1, alpha2, sigma_hi_sq)",
                first: vec![c.eta, c.alpha1, c.alpha2, hi],
                second: None,
            })
        },
        note: "eta - (1 + sigma_hi^2) alpha1 alpha2 > 0".into(),
    };

    let b3 = b3.finish("B3", format!("mu = {}", c.mu));
    let mut h3 = b3.clone();
    h3.name = "H3";
    Ok(AssumptionReport {
        checks: vec![
            b1.finish("B1", format!("alpha = {}", c.alpha)),
            b2.finish("B2", b2_note),
            b3,
            b4.finish("B4", format!("eta = {}, margin per |x-x'|^2", c.eta)),
            b5,
            AssumptionCheck {
                name: "H1",
                verdict: Verdict::NotCheckable,
                margin: f64::NAN,
                witness: None,
                note: "integrability exponent has no finite-sample counterpart".into(),
            },
            h3,
            h4.finish("H4", "driver bound identified with alpha"),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou(f: &str, consts: Constants) -> ModelSpec {
        ModelSpec::builder()
            .b(["-x"])
            .sigma(["1"])
            .f(f)
            .g("0")
            .volatility(1.0, 4.0)
            .constants(consts)
            .build()
            .unwrap()
    }

    fn ou_consts() -> Constants {
        Constants {
            lipschitz: 1.0,
            alpha: 1.0,
            alpha1: 0.0,
            alpha2: 0.0,
            mu: 0.0,
            eta: 1.0,
        }
    }

    #[test]
    fn parse_valid_model() {
        let text = r#"
            [model]
            n = 1
            d = 1
            b = "-x1"
            sigma = "1"
            f = "1/(1+x1^2)"
            g = "0"
            L = 1.0
            alpha = 1.0
            eta = 1.0

            [uncertainty]
            sigma_lo_sq = 1.0
            sigma_hi_sq = 4.0
        "#;
        let m = parse_model(text).unwrap();
        assert_eq!(m.n(), 1);
        assert_eq!(m.constants().eta, 1.0);
        assert_eq!(m.interval().sigma_hi_sq(), 4.0);
        assert_eq!(m.f_at(&[1.0], 0.0, &[0.0]).unwrap(), 0.5);
    }

    #[test]
    fn json_is_accepted() {
        let text = r#"{"model": {"b": ["-x1"], "sigma": "1", "f": "0.7", "eta": 1.0},
                       "uncertainty": {"sigma_lo_sq": 1.0, "sigma_hi_sq": 1.0}}"#;
        let m = parse_model(text).unwrap();
        assert_eq!(m.f_at(&[3.0], 0.0, &[0.0]).unwrap(), 0.7);
    }

    #[test]
    fn unknown_variable_is_rejected() {
        let text = "[model]\nb = \"-x1\"\nsigma = \"1\"\nf = \"z7\"\n";
        match parse_model(text) {
            Err(ModelError::Expression { field, source }) => {
                assert_eq!(field, "f");
                assert!(matches!(source, crate::expr::ExprError::UnknownVariable { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_sigma_is_rejected() {
        let text = "[model]\nb = \"-x1\"\nf = \"0\"\n";
        assert!(matches!(
            parse_model(text),
            Err(ModelError::MissingCoefficient(s)) if s == "sigma"
        ));
    }

    #[test]
    fn syntax_error_reports_position() {
        let text = "[model]\nb = \"-x1\"\nsigma = \"1\"\nf = \"1 + * 2\"\n";
        let err = parse_model(text).unwrap_err();
        assert!(err.to_string().contains("column 5"), "{err}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let text = "[model]\nn = 2\nb = \"-x1\"\nsigma = \"1\"\nf = \"0\"\n";
        assert!(matches!(parse_model(text), Err(ModelError::Dimension(_))));
    }

    #[test]
    fn hamiltonian_examples() {
        let single = ControlSpec::new(
            vec![vec![0.5]],
            Expression::parse("x1 + u1").unwrap(),
            vec![Expression::parse("2*u1").unwrap()],
        )
        .unwrap();
        let h = hamiltonian_from_control(&single).unwrap();
        assert_eq!(h.eval(&[1.0], &[3.0]).unwrap(), 1.5 + 3.0);

        let bang = ControlSpec::new(
            vec![vec![-1.0], vec![1.0]],
            Expression::parse("0").unwrap(),
            vec![Expression::parse("u1").unwrap()],
        )
        .unwrap();
        let h = hamiltonian_from_control(&bang).unwrap();
        for z in [-2.0, -0.1, 0.0, 0.7, 5.0] {
            assert_eq!(h.eval(&[0.0], &[z]).unwrap(), -f64::abs(z));
        }
        let empty = ControlSpec {
            controls: vec![],
            kappa: Expression::constant(0.0),
            r: vec![Expression::constant(0.0)],
        };
        assert!(matches!(
            hamiltonian_from_control(&empty),
            Err(ModelError::EmptyControlSet)
        ));
    }

    #[test]
    fn hamiltonian_matches_enumeration_and_is_concave() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let spec = ControlSpec::new(
            pts.clone(),
            Expression::parse("sin(3*u1) + x1*u1").unwrap(),
            vec![Expression::parse("0.8*u1").unwrap()],
        )
        .unwrap();
        let h = hamiltonian_from_control(&spec).unwrap();
        let (x, z) = (0.3, -1.2);
        let explicit = pts
            .iter()
            .map(|u| (3.0 * u[0]).sin() + x * u[0] + 0.8 * u[0] * z)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(h.eval(&[x], &[z]).unwrap(), explicit);

        for _ in 0..500 {
            let z1: f64 = rng.random_range(-5.0..5.0);
            let z2: f64 = rng.random_range(-5.0..5.0);
            let t: f64 = rng.random_range(0.0..1.0);
            let mid = h.eval(&[x], &[t * z1 + (1.0 - t) * z2]).unwrap();
            let chord = t * h.eval(&[x], &[z1]).unwrap() + (1.0 - t) * h.eval(&[x], &[z2]).unwrap();
            assert!(mid >= chord - 1e-12);
        }
    }

    #[test]
    fn ou_benchmark_assumptions_hold() {
        let m = ou("1/(1+x1^2)", ou_consts());
        let rep = check_assumptions(&m, &SamplingPlan::around_origin(1, 6.0)).unwrap();
        for name in ["B1", "B2", "B4", "B5", "H4"] {
            assert_eq!(rep.get(name).unwrap().verdict, Verdict::HoldsOnSample, "{name}\n{rep}");
        }
        // B4 is tight for a linear drift.
        assert!(rep.get("B4").unwrap().margin.abs() < 1e-9);
        assert_eq!(rep.get("H1").unwrap().verdict, Verdict::NotCheckable);
    }

    #[test]
    fn monotonicity_checks() {
        let mut c = ou_consts();
        c.mu = 2.0;
        c.lipschitz = 2.0;
        c.alpha = 10.0;
        let m = ou("-2*y", c);
        let rep = check_assumptions(&m, &SamplingPlan::around_origin(1, 2.0)).unwrap();
        let h3 = rep.get("H3").unwrap();
        assert_eq!(h3.verdict, Verdict::HoldsOnSample);
        assert!(h3.margin.abs() < 1e-12);

        c.mu = 1.0;
        let m = ou("y", c);
        let rep = check_assumptions(&m, &SamplingPlan::around_origin(1, 2.0)).unwrap();
        let h3 = rep.get("H3").unwrap();
        assert_eq!(h3.verdict, Verdict::Violated);
        let w = h3.witness.as_ref().unwrap();
        let (y, yp) = (*w.first.last().unwrap(), w.second.as_ref().unwrap()[0]);
        assert!(y != yp);
        // The witness really violates the secant inequality.
        assert!((y - yp) * (y - yp) > -(y - yp) * (y - yp));
    }

    #[test]
    fn b5_arithmetic() {
        let mut c = ou_consts();
        c.alpha1 = 0.5;
        c.alpha2 = 0.5;
        // 1 - 5 * 0.25 < 0
        let m = ou("0", c);
        let rep = check_assumptions(&m, &SamplingPlan::around_origin(1, 1.0)).unwrap();
        assert_eq!(rep.get("B5").unwrap().verdict, Verdict::Violated);
        assert!(rep.get("B5").unwrap().witness.is_some());
    }

    #[test]
    fn lipschitz_bound_formula() {
        let c = ou_consts();
        assert_eq!(c.lipschitz_bound(4.0), 5.0);
    }
}
