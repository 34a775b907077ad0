//! Closed-loop plant simulation and fuel metrics.
//!
//! The plant advances the battery with the same SOC dynamics the controllers
//! plan with (no plant–model mismatch by default). Every commanded genset
//! point is independently re-validated against the torque envelopes and
//! battery power bounds before it is applied; power balance holds exactly by
//! construction because the battery is defined as the residual.

use crate::config::PowertrainParams;
use crate::powertrain::{
    battery_soc_step, demand_power, genset_solve, voc_lookup, PowertrainError,
};
use crate::strategy::{ControlCommand, StepObservation, Strategy, StrategyError};
use crate::TORQUE_SPEED_TO_POWER;
use thiserror::Error;

/// One sample of the load profile the plant replays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleSample {
    pub t_s: f64,
    pub v_kmh: f64,
    pub slope_rad: f64,
    pub yaw_rad_s: f64,
}

/// Uniformly sampled driving cycle; the plant's ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingCycle {
    pub dt_s: f64,
    pub samples: Vec<CycleSample>,
}

impl DrivingCycle {
    pub fn new(samples: Vec<CycleSample>) -> Result<Self, SimError> {
        if samples.len() < 2 {
            return Err(SimError::InvalidCycle("need at least two samples".into()));
        }
        let dt = samples[1].t_s - samples[0].t_s;
        if !(dt > 0.0) {
            return Err(SimError::InvalidCycle("time must be strictly increasing".into()));
        }
        for (i, w) in samples.windows(2).enumerate() {
            let step = w[1].t_s - w[0].t_s;
            if (step - dt).abs() > 1e-9 {
                return Err(SimError::InvalidCycle(format!(
                    "non-uniform time step at sample {}: {} vs {}",
                    i + 1,
                    step,
                    dt
                )));
            }
        }
        if let Some(i) = samples.iter().position(|s| !s.v_kmh.is_finite() || s.v_kmh < 0.0) {
            return Err(SimError::InvalidCycle(format!("bad velocity at sample {i}")));
        }
        Ok(Self { dt_s: dt, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Acceleration implied by consecutive samples; the final sample holds.
    pub fn accel_ms2(&self, k: usize) -> f64 {
        if k + 1 < self.samples.len() {
            crate::kmh_to_ms(self.samples[k + 1].v_kmh - self.samples[k].v_kmh) / self.dt_s
        } else {
            0.0
        }
    }
}

/// Per-step record; `soc` is the state after the step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimRecord {
    pub t_s: f64,
    pub v_kmh: f64,
    pub soc: f64,
    pub p_req_w: f64,
    pub p_b_w: f64,
    pub p_g_w: f64,
    pub engine_speed_rpm: f64,
    pub engine_torque_nm: f64,
    pub gen_torque_nm: f64,
    pub fuel_rate_g_s: f64,
    pub fuel_cum_g: f64,
    pub fallback: bool,
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub soc_init: f64,
    pub dt_s: f64,
    pub records: Vec<SimRecord>,
}

impl SimLog {
    pub fn final_soc(&self) -> f64 {
        self.records.last().map_or(self.soc_init, |r| r.soc)
    }

    pub fn total_fuel_g(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.fuel_cum_g)
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid cycle: {0}")]
    InvalidCycle(String),
    #[error("battery bound violated at step {step}: {source}")]
    BatteryBound {
        step: usize,
        source: PowertrainError,
        partial: SimLog,
    },
    #[error("command failed re-validation at step {step}: {reason}")]
    CommandViolation {
        step: usize,
        reason: String,
        partial: SimLog,
    },
    #[error("strategy failed at step {step}: {source}")]
    Strategy {
        step: usize,
        source: StrategyError,
        partial: SimLog,
    },
}

/// Run one strategy over a cycle. `planned_ms` is the planner's velocity
/// intent on the same time grid (m/s); strategies that ignore it may receive
/// an empty slice. `plan_window` is how many upcoming planned samples each
/// observation exposes.
pub fn simulate(
    cycle: &DrivingCycle,
    planned_ms: &[f64],
    strategy: &mut dyn Strategy,
    params: &PowertrainParams,
    soc_init: f64,
    plan_window: usize,
) -> Result<SimLog, SimError> {
    let n = cycle.len();
    let mut log = SimLog { soc_init, dt_s: cycle.dt_s, records: Vec::with_capacity(n) };
    let mut soc = soc_init;
    let mut fuel_cum = 0.0;
    let mut prev_speed = params.genset.idle_speed_rpm;

    for k in 0..n {
        let s = cycle.samples[k];
        let p_req = demand_power(s.v_kmh, cycle.accel_ms2(k), s.slope_rad, s.yaw_rad_s, &params.vehicle)
            .map_err(|e| SimError::BatteryBound { step: k, source: e, partial: log.clone() })?;

        let window: Vec<f64> = if planned_ms.is_empty() {
            Vec::new()
        } else {
            let lo = (k + 1).min(planned_ms.len());
            let hi = (k + 1 + plan_window).min(planned_ms.len());
            let mut w: Vec<f64> = planned_ms[lo..hi].to_vec();
            let pad = planned_ms.last().copied().unwrap_or(0.0);
            while w.len() < plan_window {
                w.push(pad);
            }
            w
        };

        let obs = StepObservation {
            t_s: s.t_s,
            v_kmh: s.v_kmh,
            accel_ms2: cycle.accel_ms2(k),
            slope_rad: s.slope_rad,
            yaw_rad_s: s.yaw_rad_s,
            planned_window: &window,
            p_req_w: p_req,
            soc,
            dt_s: cycle.dt_s,
        };
        let cmd = strategy
            .step(&obs)
            .map_err(|e| SimError::Strategy { step: k, source: e, partial: log.clone() })?;

        if let Err(reason) = validate_command(&cmd, prev_speed, cycle.dt_s, params) {
            return Err(SimError::CommandViolation { step: k, reason, partial: log.clone() });
        }

        // the battery absorbs whatever the genset does not cover
        let p_b = p_req - cmd.p_g_w;
        let b = &params.battery;
        if p_b < b.p_charge_max_w - 1e-9 || p_b > b.p_discharge_max_w + 1e-9 {
            return Err(SimError::BatteryBound {
                step: k,
                source: PowertrainError::InfeasiblePower { p_w: p_b, voc: 0.0 },
                partial: log.clone(),
            });
        }
        soc = battery_soc_step(soc, p_b, b, cycle.dt_s)
            .map_err(|e| SimError::BatteryBound { step: k, source: e, partial: log.clone() })?;

        fuel_cum += cmd.op.fuel_rate_g_s * cycle.dt_s;
        prev_speed = cmd.engine_speed_rpm;
        log.records.push(SimRecord {
            t_s: s.t_s,
            v_kmh: s.v_kmh,
            soc,
            p_req_w: p_req,
            p_b_w: p_b,
            p_g_w: cmd.p_g_w,
            engine_speed_rpm: cmd.engine_speed_rpm,
            engine_torque_nm: cmd.op.engine_torque_nm,
            gen_torque_nm: cmd.op.gen_torque_nm,
            fuel_rate_g_s: cmd.op.fuel_rate_g_s,
            fuel_cum_g: fuel_cum,
            fallback: cmd.fallback,
            saturated: cmd.saturated,
        });
    }
    Ok(log)
}

/// Independent re-validation of a command against the genset envelopes and
/// the battery power bounds the controller assumed.
fn validate_command(
    cmd: &ControlCommand,
    prev_speed_rpm: f64,
    dt_s: f64,
    params: &PowertrainParams,
) -> Result<(), String> {
    let dn_dt = (cmd.engine_speed_rpm - prev_speed_rpm) / dt_s;
    genset_solve(cmd.engine_speed_rpm, cmd.p_g_w, dn_dt, &params.genset)
        .map_err(|e| e.to_string())?;
    let b = &params.battery;
    if cmd.p_b_w < b.p_charge_max_w - 1e-6 || cmd.p_b_w > b.p_discharge_max_w + 1e-6 {
        return Err(format!("implied battery power {} outside bounds", cmd.p_b_w));
    }
    Ok(())
}

/// SOC-corrected equivalent fuel (g): raw fuel plus the net battery energy
/// converted at the fuel map's peak efficiency and the generator efficiency.
pub fn equivalent_fuel_g(log: &SimLog, params: &PowertrainParams, soc_target: f64) -> f64 {
    let b = &params.battery;
    let g = &params.genset;
    let dsoc = log.soc_init - log.final_soc();
    let voc = voc_lookup(soc_target, b).unwrap_or(0.0);
    let eta_e = g.fuel_map_peak_eff();
    let correction = dsoc * b.capacity_coulombs * voc / (g.fuel_lhv_j_per_g * eta_e * g.gen_eff);
    log.total_fuel_g() + correction
}

/// Conversion efficiency of one logged operating point.
pub fn record_efficiency(r: &SimRecord, params: &PowertrainParams) -> f64 {
    if r.fuel_rate_g_s <= 0.0 {
        return 0.0;
    }
    let mech = r.engine_torque_nm * r.engine_speed_rpm / TORQUE_SPEED_TO_POWER;
    mech / (r.fuel_rate_g_s * params.genset.fuel_lhv_j_per_g)
}

/// Fraction of logged operating points inside the fuel map's top-efficiency
/// decile (η ≥ 0.9 · η_peak).
pub fn high_efficiency_fraction(log: &SimLog, params: &PowertrainParams) -> f64 {
    if log.records.is_empty() {
        return 0.0;
    }
    let threshold = 0.9 * params.genset.fuel_map_peak_eff();
    let hits = log
        .records
        .iter()
        .filter(|r| record_efficiency(r, params) >= threshold)
        .count();
    hits as f64 / log.records.len() as f64
}

/// Largest power-balance residual |P_g + P_b − P_req| over the log, relative
/// to max(|P_req|, 1).
pub fn max_power_balance_residual(log: &SimLog) -> f64 {
    log.records
        .iter()
        .map(|r| (r.p_g_w + r.p_b_w - r.p_req_w).abs() / r.p_req_w.abs().max(1.0))
        .fold(0.0, f64::max)
}
