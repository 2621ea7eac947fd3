//! Probabilistic oracles independent of the finite-difference code:
//! Euler path simulation under volatility scenarios, enumeration of
//! open-loop worst cases, a recombining-lattice dynamic program for the
//! adapted worst case, the explicit linear G-BSDE representation, and the
//! Girsanov drift shift used for ergodic control costs.

mod girsanov;
mod lattice;
mod linear;
mod paths;

pub use girsanov::{girsanov_expectation, girsanov_field, Feedback};
pub use lattice::{lattice_value, LatticeParams};
pub use linear::{linear_bsde_explicit, LinearDriver};
pub use paths::{
    simulate_controlled, simulate_forward, upper_expectation_scenarios, PathBundle, Scenario,
    ScenarioSearch, ScenarioValue, VolatilityControl, SCENARIO_GUARD,
};
