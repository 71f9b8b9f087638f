//! Monte Carlo checks of the q-optimal density in the univariate
//! stochastic-volatility model.
//!
//! The module simulates the price and volatility SDEs, evaluates the
//! fundamental equation for a supplied candidate `(η, ξ, c)` pathwise, and
//! estimates the constant `c_H = ln c` both by simulation and, when the price
//! of risk is deterministic, in closed form. It verifies candidates; it does
//! not solve for them.

mod estimate;
mod simulate;
mod spec;

pub use estimate::{
    ch_deterministic, ch_from_bundle, ch_monte_carlo, ch_on_grid, ch_volatility_only,
    closed_form_ch, fundamental_eq_residual, fundamental_from_bundle, pathwise_from_bundle,
    pathwise_identity_check, ChEstimate, ChMonteCarlo, PathwiseCheck, ResidualStats,
};
pub use simulate::{
    simulate, simulate_with, PathBundle, PathFunctionals, PathRecord, SimConfig, Trajectory,
    SIGMA_FLOOR,
};
pub use spec::{Candidate, Coefficient, DiffusionSpec, Profile};
