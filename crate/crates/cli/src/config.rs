//! Run configuration: the model blocks shared with the core crate plus the
//! blocks that drive each subcommand.

use serde::Deserialize;

use gebsde::ergodic::DiscountSchedule;
use gebsde::models::{from_config_text, model_from_blocks, ControlBlock, ModelBlock, UncertaintyBlock};
use gebsde::pde::{BoundaryPolicy, Grid};
use gebsde::control::ControlSpec;
use gebsde::ModelSpec;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelBlock,
    pub uncertainty: Option<UncertaintyBlock>,
    #[serde(default)]
    pub grid: GridBlock,
    #[serde(default)]
    pub ergodic: ErgodicBlock,
    pub parabolic: Option<ParabolicBlock>,
    pub discounted: Option<DiscountedBlock>,
    pub oracle: Option<OracleBlock>,
    pub control: Option<ControlRunBlock>,
    #[serde(default)]
    pub verify: VerifyBlock,
    #[serde(default)]
    pub expect: ExpectBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridBlock {
    pub half_width: f64,
    pub h: f64,
    pub dt: Option<f64>,
    pub boundary: BoundaryPolicy,
}

impl Default for GridBlock {
    fn default() -> Self {
        Self {
            half_width: 8.0,
            h: 0.05,
            dt: None,
            boundary: BoundaryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErgodicBlock {
    pub gamma1: f64,
    pub gamma2: f64,
    /// Explicit schedule; overrides `eps0`, `ratio`, `count`.
    pub eps: Option<Vec<f64>>,
    pub eps0: f64,
    pub ratio: f64,
    pub count: usize,
    /// Accuracy asked of each `eps v^eps(0)`.
    pub tol: f64,
    /// Stationarity tolerance when relaxing onto the discrete ergodic pair;
    /// zero skips the relaxation.
    pub relax_tol: f64,
    pub horizons: Vec<f64>,
    pub x: Vec<f64>,
}

impl Default for ErgodicBlock {
    fn default() -> Self {
        Self {
            gamma1: -1.0,
            gamma2: 0.0,
            eps: None,
            eps0: 0.4,
            ratio: 0.5,
            count: 6,
            tol: 1e-5,
            relax_tol: 1e-10,
            horizons: vec![4.0, 8.0, 16.0],
            x: vec![0.0],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParabolicBlock {
    pub terminal: String,
    pub horizon: f64,
    #[serde(default = "origin")]
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscountedBlock {
    pub eps: f64,
    #[serde(default = "tight")]
    pub tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleBlock {
    /// Lattice spacing.
    pub h: f64,
    /// Paths per scenario for the open-loop enumeration; zero skips it.
    pub n_paths: usize,
    /// Piecewise-constant intervals in the enumeration.
    pub intervals: usize,
    pub substeps: usize,
}

impl Default for OracleBlock {
    fn default() -> Self {
        Self {
            h: 0.05,
            n_paths: 4000,
            intervals: 4,
            substeps: 25,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ControlRunBlock {
    #[serde(flatten)]
    pub spec: ControlBlock,
    #[serde(default = "control_horizons")]
    pub horizons: Vec<f64>,
    #[serde(default = "lattice_h")]
    pub lattice_h: f64,
    #[serde(default)]
    pub random_feedbacks: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyBlock {
    pub n_paths: usize,
    pub steps: usize,
    pub horizon: f64,
    /// Rise above the running minimum tolerated in a "decreasing" K path.
    pub k_tol: f64,
    pub keep_paths: usize,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        Self {
            n_paths: 2000,
            steps: 2000,
            horizon: 4.0,
            k_tol: 0.05,
            keep_paths: 8,
        }
    }
}

/// Expected values with tolerances; each present entry becomes an
/// acceptance check.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectBlock {
    pub lambda: Option<f64>,
    /// Absolute tolerance on `lambda`.
    pub lambda_tol: Option<f64>,
    /// Relative agreement asked between extraction methods.
    pub cross_rel: Option<f64>,
    /// Value of the parabolic problem at `parabolic.x`.
    pub value: Option<f64>,
    pub value_tol: Option<f64>,
    /// Relative tolerance on `J(u*) - lambda` and the random-feedback bound.
    pub control_rel: Option<f64>,
    /// Bound on `|E K_T| / T` along the worst case.
    pub closure: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: String,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

fn origin() -> Vec<f64> {
    vec![0.0]
}

fn tight() -> f64 {
    1e-8
}

fn control_horizons() -> Vec<f64> {
    vec![4.0, 8.0, 16.0]
}

fn lattice_h() -> f64 {
    0.05
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub grid_h: Option<f64>,
    pub tol: Option<f64>,
}

impl Overrides {
    /// Stable one-line rendering for the report.
    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if let Some(s) = self.seed {
            parts.push(format!("seed={s}"));
        }
        if let Some(h) = self.grid_h {
            parts.push(format!("grid-h={h}"));
        }
        if let Some(t) = self.tol {
            parts.push(format!("tol={t}"));
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join(" ")
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        Ok(from_config_text(text)?)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
        if let Some(h) = o.grid_h {
            self.grid.h = h;
        }
        if let Some(t) = o.tol {
            self.ergodic.tol = t;
        }
    }

    pub fn model(&self) -> Result<ModelSpec, CliError> {
        let control = self.control.as_ref().map(|c| &c.spec);
        Ok(model_from_blocks(self.model.clone(), self.uncertainty.clone(), control)?)
    }

    pub fn control_spec(&self, m: &ModelSpec) -> Result<ControlSpec, CliError> {
        let c = self
            .control
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [control] block".into()))?;
        Ok(c.spec.to_spec(m.n(), m.d())?)
    }

    pub fn grid(&self, n: usize) -> Result<Grid, CliError> {
        let mut g = Grid::centered(n, self.grid.half_width, self.grid.h)
            .map_err(|e| CliError::Config(e.to_string()))?
            .with_boundary(self.grid.boundary);
        if let Some(dt) = self.grid.dt {
            g = g.with_dt(dt);
        }
        Ok(g)
    }

    pub fn schedule(&self) -> Result<DiscountSchedule, CliError> {
        let e = &self.ergodic;
        let s = match &e.eps {
            Some(list) => DiscountSchedule::new(list.clone()),
            None => DiscountSchedule::geometric(e.eps0, e.ratio, e.count),
        };
        s.map_err(|err| CliError::Config(err.to_string()))
    }

    pub fn parabolic(&self) -> Result<&ParabolicBlock, CliError> {
        self.parabolic
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [parabolic] block".into()))
    }
}
