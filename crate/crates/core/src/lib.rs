//! Numerical toolkit for fully nonlinear parabolic, elliptic and ergodic
//! PDEs driven by a sublinear volatility generator `G`, together with the
//! Monte Carlo and lattice machinery used to cross-check them.
//!
//! The pieces, bottom-up:
//!
//! * [`gcalculus`]: the generator `G` of a volatility interval.
//! * [`expr`]: the small coefficient language used by models and configs.
//! * [`models`]: coefficient bundles, constants and assumption probes.
//! * [`pde`]: grids, fields and the monotone explicit scheme.
//! * [`ergodic`]: the ergodic constant via vanishing discount and large time.
//! * [`mc_oracle`]: path simulation and the independent lattice oracle.
//! * [`control`]: ergodic control with a finite control set.

pub mod control;
pub mod ergodic;
pub mod error;
pub mod expr;
pub mod gcalculus;
pub mod mc_oracle;
pub mod models;
pub mod pde;

pub use error::{ControlError, ErgodicError, GError, ModelError, OracleError, PdeError};
pub use expr::Expression;
pub use gcalculus::{GFunction, UncertaintyInterval};
pub use models::{Constants, Driver, ModelSpec};
