use std::fmt::Write as _;

use crate::error::PdeError;
use crate::expr::{Expression, Vars};

use super::grid::{Axis, Grid};

/// Nodal values on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, PdeError> {
        if values.len() != grid.len() {
            return Err(PdeError::GridMismatch);
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self {
            values: vec![c; grid.len()],
            grid: grid.clone(),
        }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let n = grid.dim();
        let values = (0..grid.len()).map(|i| f(&grid.node(i)[..n])).collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    /// Sample an expression in `x`.
    pub fn from_expression(grid: &Grid, e: &Expression) -> Result<Self, PdeError> {
        let n = grid.dim();
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let x = grid.node(i);
            let v = e.eval(&Vars::x(&x[..n])).map_err(|_| PdeError::NonFinite {
                node: i,
                x: x[..n].to_vec(),
                stage: "terminal condition",
            })?;
            values.push(v);
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest `|value|` over nodes at least `fraction` of the box away from
    /// every edge.
    pub fn interior_sup(&self, fraction: f64) -> f64 {
        (0..self.values.len())
            .filter(|&i| self.grid.is_interior(i, fraction))
            .fold(0.0, |m, i| m.max(self.values[i].abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Multilinear interpolation. Points outside the box are an error.
    pub fn interpolate(&self, x: &[f64]) -> Result<f64, PdeError> {
        if !self.grid.contains(x) {
            return Err(PdeError::OutsideDomain(x.to_vec()));
        }
        let axes = self.grid.axes();
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for (k, a) in axes.iter().enumerate() {
            let s = ((x[k] - a.lo) / a.h).clamp(0.0, (a.nodes - 1) as f64);
            let j = (s.floor() as usize).min(a.nodes - 2);
            base[k] = j;
            frac[k] = s - j as f64;
        }
        if axes.len() == 1 {
            let v = &self.values;
            let j = base[0];
            return Ok(v[j] + frac[0] * (v[j + 1] - v[j]));
        }
        let mut acc = 0.0;
        for c in 0..4usize {
            let o = [c & 1, c >> 1];
            let w = (0..2)
                .map(|k| if o[k] == 1 { frac[k] } else { 1.0 - frac[k] })
                .product::<f64>();
            if w != 0.0 {
                acc += w * self.values[self.grid.flat([base[0] + o[0], base[1] + o[1]])];
            }
        }
        Ok(acc)
    }

    /// Central-difference gradient of the interpolant with step equal to the
    /// grid spacing; one-sided where the stencil would leave the box.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, PdeError> {
        if !self.grid.contains(x) {
            return Err(PdeError::OutsideDomain(x.to_vec()));
        }
        let mut out = Vec::with_capacity(x.len());
        for (k, a) in self.grid.axes().iter().enumerate() {
            let mut lo = x.to_vec();
            let mut hi = x.to_vec();
            lo[k] = (x[k] - a.h).max(a.lo);
            hi[k] = (x[k] + a.h).min(a.hi());
            out.push((self.interpolate(&hi)? - self.interpolate(&lo)?) / (hi[k] - lo[k]));
        }
        Ok(out)
    }

    /// CSV with a `# grid` header line followed by one `x[,y],u` row per node.
    pub fn to_csv(&self) -> String {
        let mut s = grid_header(&self.grid, false);
        let n = self.grid.dim();
        for (i, v) in self.values.iter().enumerate() {
            let x = self.grid.node(i);
            for c in &x[..n] {
                let _ = write!(s, "{c},");
            }
            let _ = writeln!(s, "{v}");
        }
        s
    }

    /// Inverse of [`Field::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, PdeError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| PdeError::InvalidArgument("empty field CSV".into()))?;
        let grid = parse_header(header)?;
        let n = grid.dim();
        let mut values = Vec::with_capacity(grid.len());
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let last = line
                .split(',')
                .nth(n)
                .ok_or_else(|| PdeError::InvalidArgument(format!("short row `{line}`")))?;
            values.push(
                last.trim()
                    .parse::<f64>()
                    .map_err(|e| PdeError::InvalidArgument(format!("row `{line}`: {e}")))?,
            );
        }
        Field::new(grid, values)
    }
}

fn grid_header(grid: &Grid, with_t: bool) -> String {
    let mut s = String::from("# grid");
    for a in grid.axes() {
        let _ = write!(s, " {} {} {}", a.lo, a.hi(), a.h);
    }
    if with_t {
        s.push_str(" t");
    }
    s.push('\n');
    s
}

fn parse_header(line: &str) -> Result<Grid, PdeError> {
    let bad = || PdeError::InvalidArgument(format!("bad grid header `{line}`"));
    let rest = line.strip_prefix("# grid").ok_or_else(bad)?;
    let nums: Vec<f64> = rest
        .split_whitespace()
        .filter(|t| *t != "t")
        .map(|t| t.parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    if nums.is_empty() || nums.len() % 3 != 0 {
        return Err(bad());
    }
    let axes = nums
        .chunks(3)
        .map(|c| Axis::new(c[0], c[1], c[2]))
        .collect::<Result<Vec<_>, _>>()?;
    Grid::new(axes)
}

/// Snapshots of a field at increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeField {
    times: Vec<f64>,
    slices: Vec<Field>,
}

impl TimeField {
    pub(crate) fn new() -> Self {
        Self {
            times: Vec::new(),
            slices: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, t: f64, f: Field) {
        self.times.push(t);
        self.slices.push(f);
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slices(&self) -> &[Field] {
        &self.slices
    }

    /// The slice at the largest time.
    pub fn last(&self) -> &Field {
        self.slices.last().expect("time field is never empty")
    }

    /// Rows `x[,y],t,u` for every stored slice.
    pub fn to_csv(&self) -> String {
        let grid = self.last().grid();
        let mut s = grid_header(grid, true);
        let n = grid.dim();
        for (t, f) in self.times.iter().zip(&self.slices) {
            for (i, v) in f.values().iter().enumerate() {
                let x = grid.node(i);
                for c in &x[..n] {
                    let _ = write!(s, "{c},");
                }
                let _ = writeln!(s, "{t},{v}");
            }
        }
        s
    }
}
