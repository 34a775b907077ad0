//! Aggregated runtime configuration: powertrain parameter bundle plus the
//! knobs of every subsystem, overridable from a flat key-value parameter
//! file (see [`crate::io`]).

use crate::planner::PlannerLimits;
use crate::powertrain::{BatteryParams, GensetParams, PowertrainError, VehicleParams};
use crate::predict::TrainConfig;

/// The three physical parameter records used by every model evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PowertrainParams {
    pub vehicle: VehicleParams,
    pub battery: BatteryParams,
    pub genset: GensetParams,
}

impl PowertrainParams {
    pub fn validate(&self) -> Result<(), PowertrainError> {
        self.vehicle.validate()?;
        self.battery.validate()?;
        self.genset.validate()
    }
}

/// Dynamic-programming solver knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct DpConfig {
    /// Number of SOC cells over [soc_min, soc_max].
    pub soc_cells: usize,
    /// Number of engine-speed levels over [idle, max].
    pub speed_levels: usize,
    /// Fuel weight ω₁ (per gram).
    pub w_fuel: f64,
    /// SOC-deviation weight ω₂ (per SOC² per second).
    pub w_soc: f64,
    pub soc_target: f64,
    pub dt_s: f64,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            // cell width 1e-4 SOC: at 60 kW the battery moves ~5.6e-4/s, so
            // a 1 s step can span several cells in either direction
            soc_cells: 2000,
            speed_levels: 13,
            w_fuel: 1.0,
            w_soc: 1000.0,
            soc_target: 0.7,
            dt_s: 1.0,
        }
    }
}

/// Rule-based power-following baseline constants.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFollowConfig {
    /// First-order demand filter time constant (s).
    pub tau_s: f64,
    /// SOC correction gain (dimensionless).
    pub k_soc: f64,
    /// SOC correction scaling power (W).
    pub p_corr_w: f64,
}

impl Default for PowerFollowConfig {
    fn default() -> Self {
        Self { tau_s: 2.0, k_soc: 20.0, p_corr_w: 30_000.0 }
    }
}

/// Synthetic cycle generator constants.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleGenConfig {
    /// Tracking-plant proportional gain.
    pub k_track: f64,
    /// Velocity noise standard deviation (m/s).
    pub sigma_v: f64,
    /// Episodes per generated dataset.
    pub episodes: usize,
    /// Target episode duration (s).
    pub duration_s: f64,
}

impl Default for CycleGenConfig {
    fn default() -> Self {
        Self { k_track: 0.6, sigma_v: 0.15, episodes: 40, duration_s: 150.0 }
    }
}

/// Everything in one place; this is what the parameter file mutates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    pub powertrain: PowertrainParams,
    pub planner: PlannerLimits,
    pub train: TrainConfig,
    pub dp: DpConfig,
    pub power_follow: PowerFollowConfig,
    pub cyclegen: CycleGenConfig,
}

impl Config {
    /// Cross-checks that only make sense on the assembled configuration.
    pub fn validate(&self) -> Result<(), String> {
        self.powertrain.validate().map_err(|e| e.to_string())?;
        self.planner.validate().map_err(|e| e.to_string())?;
        if self.dp.soc_cells < 2 {
            return Err("dp.soc_cells must be at least 2".into());
        }
        if self.dp.speed_levels < 1 {
            return Err("dp.speed_levels must be at least 1".into());
        }
        if !(self.powertrain.battery.soc_min <= self.dp.soc_target
            && self.dp.soc_target <= self.powertrain.battery.soc_max)
        {
            return Err("dp.soc_target outside the battery SOC band".into());
        }
        if self.dp.dt_s <= 0.0 {
            return Err("dp.dt_s must be positive".into());
        }
        Ok(())
    }
}
