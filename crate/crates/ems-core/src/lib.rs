//! Energy management library for a series-hybrid unmanned tracked vehicle.
//!
//! The pipeline, end to end:
//!
//! 1. [`planner`] turns a curvature-annotated path into a velocity profile
//!    that respects lateral-acceleration, longitudinal-acceleration and jerk
//!    limits.
//! 2. [`predict`] forecasts the next few seconds of vehicle velocity from the
//!    recent history and the planned profile (four interchangeable models).
//! 3. [`dp`] solves the finite-horizon power-split problem over a
//!    SOC × engine-speed lattice by forward dynamic programming.
//! 4. [`strategy`] wraps the solver in a receding-horizon controller and
//!    provides the rule-based power-following baseline.
//! 5. [`sim`] closes the loop against a plant built from the same
//!    [`powertrain`] equations, and [`report`] compares strategies by
//!    SOC-corrected equivalent fuel.
//!
//! All randomness flows from explicit seeds; every run is reproducible.
//! With the (default) `parallel` feature, lattice relaxation and independent
//! simulations fan out over rayon; results are identical to the sequential
//! fallback.

pub mod config;
pub mod curve;
pub mod cyclegen;
pub mod dp;
pub mod io;
pub mod planner;
pub mod powertrain;
pub mod predict;
pub mod report;
pub mod sim;
pub mod strategy;

/// km/h per m/s.
pub const KMH_PER_MS: f64 = 3.6;

/// Conversion factor between mechanical power and torque·speed: P [W] = T [N·m] · n [rpm] / 9.55.
pub const TORQUE_SPEED_TO_POWER: f64 = 9.55;

/// Convert km/h to m/s.
pub fn kmh_to_ms(v_kmh: f64) -> f64 {
    v_kmh / KMH_PER_MS
}

/// Convert m/s to km/h.
pub fn ms_to_kmh(v_ms: f64) -> f64 {
    v_ms * KMH_PER_MS
}
