//! The sublinear generator `G` of a volatility uncertainty interval.
//!
//! For a one-dimensional G-Brownian motion with `d<B>_t / dt` ranging over
//! `[sigma_lo_sq, sigma_hi_sq]`,
//!
//! ```text
//! G(a) = 1/2 sup_{v in [lo, hi]} v a = 1/2 (hi a^+ - lo a^-)
//! ```
//!
//! The two-dimensional case is the product of two such intervals with
//! diagonal covariance, so `G(A)` only sees the diagonal of `A` and cross
//! covariations vanish identically.

use serde::{Deserialize, Serialize};

use crate::error::GError;

/// Volatility bounds of a non-degenerate G-Brownian motion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyInterval {
    sigma_lo_sq: f64,
    sigma_hi_sq: f64,
    dim: usize,
}

impl UncertaintyInterval {
    pub fn new(sigma_lo_sq: f64, sigma_hi_sq: f64, dim: usize) -> Result<Self, GError> {
        if !(sigma_lo_sq.is_finite() && sigma_hi_sq.is_finite())
            || sigma_lo_sq <= 0.0
            || sigma_lo_sq > sigma_hi_sq
        {
            return Err(GError::InvalidInterval {
                lo: sigma_lo_sq,
                hi: sigma_hi_sq,
            });
        }
        if dim != 1 && dim != 2 {
            return Err(GError::UnsupportedDimension(dim));
        }
        Ok(Self {
            sigma_lo_sq,
            sigma_hi_sq,
            dim,
        })
    }

    /// One-dimensional interval.
    pub fn scalar(sigma_lo_sq: f64, sigma_hi_sq: f64) -> Result<Self, GError> {
        Self::new(sigma_lo_sq, sigma_hi_sq, 1)
    }

    /// Collapsed interval: classical Brownian motion with variance `s`.
    pub fn classical(s: f64) -> Result<Self, GError> {
        Self::new(s, s, 1)
    }

    pub fn sigma_lo_sq(&self) -> f64 {
        self.sigma_lo_sq
    }

    pub fn sigma_hi_sq(&self) -> f64 {
        self.sigma_hi_sq
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.sigma_lo_sq + self.sigma_hi_sq)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.sigma_lo_sq && v <= self.sigma_hi_sq
    }

    pub fn is_degenerate(&self) -> bool {
        self.sigma_lo_sq == self.sigma_hi_sq
    }
}

/// The generator `G` of an [`UncertaintyInterval`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GFunction {
    interval: UncertaintyInterval,
}

impl GFunction {
    pub fn new(interval: UncertaintyInterval) -> Self {
        Self { interval }
    }

    pub fn interval(&self) -> &UncertaintyInterval {
        &self.interval
    }

    pub fn dim(&self) -> usize {
        self.interval.dim
    }

    /// `G` on a scalar argument (the `d = 1` case, or one diagonal entry).
    #[inline]
    pub fn scalar(&self, a: f64) -> f64 {
        if a >= 0.0 {
            0.5 * self.interval.sigma_hi_sq * a
        } else {
            0.5 * self.interval.sigma_lo_sq * a
        }
    }

    /// The volatility level attaining the supremum in `G(a)`. Ties (`a == 0`)
    /// resolve to the upper bound.
    #[inline]
    pub fn argmax(&self, a: f64) -> f64 {
        if a >= 0.0 {
            self.interval.sigma_hi_sq
        } else {
            self.interval.sigma_lo_sq
        }
    }

    /// `G(A)` for a symmetric `d x d` matrix stored row-major.
    pub fn eval(&self, a: &[f64]) -> Result<f64, GError> {
        let d = self.interval.dim;
        if a.len() != d * d {
            return Err(GError::DimensionMismatch {
                expected: d,
                got: a.len(),
            });
        }
        if d == 2 && a[1] != a[2] {
            return Err(GError::NotSymmetric);
        }
        Ok((0..d).map(|i| self.scalar(a[i * d + i])).sum())
    }

    /// `gamma1 + 2 G(gamma2)`; a negative value is required for the
    /// ergodic weighting to be feasible.
    pub fn dissipativity_margin(&self, gamma1: f64, gamma2: &[f64]) -> Result<f64, GError> {
        Ok(gamma1 + 2.0 * self.eval(gamma2)?)
    }
}
