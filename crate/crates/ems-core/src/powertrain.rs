//! Powertrain physics for the series-hybrid tracked vehicle.
//!
//! Pure evaluation of demand power, battery SOC dynamics (and the exact
//! algebraic inverse), engine-generator coupling and the fuel map. All
//! operations are functions of immutable parameter records and are safe to
//! call concurrently.

use crate::curve::{BilinearGrid, Curve};
use crate::TORQUE_SPEED_TO_POWER;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PowertrainError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("velocity must be non-negative, got {0} km/h")]
    NegativeVelocity(f64),
    #[error("battery power {p_w:.1} W infeasible at V_oc {voc:.1} V (negative discriminant)")]
    InfeasiblePower { p_w: f64, voc: f64 },
    #[error("soc {soc:.4} outside [{lo:.4}, {hi:.4}]")]
    SocOutOfBounds { soc: f64, lo: f64, hi: f64 },
    #[error("engine speed {speed:.0} rpm outside [{lo:.0}, {hi:.0}]")]
    SpeedOutOfRange { speed: f64, lo: f64, hi: f64 },
    #[error("{side} torque {torque:.1} N·m exceeds envelope {limit:.1} N·m at {speed:.0} rpm")]
    TorqueEnvelope {
        side: &'static str,
        torque: f64,
        limit: f64,
        speed: f64,
    },
    #[error("negative target power {0:.1} W (genset cannot absorb power)")]
    NegativeGensetPower(f64),
    #[error(transparent)]
    Curve(#[from] crate::curve::CurveError),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

pub type Result<T> = std::result::Result<T, PowertrainError>;

/// Vehicle-level parameters entering the demand-power equation.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleParams {
    /// Total mass (kg).
    pub mass_kg: f64,
    /// Final drive ratio (dimensionless).
    pub transmission_ratio: f64,
    /// Drive wheel radius (m).
    pub drive_wheel_radius_m: f64,
    /// Ground (rolling) resistance coefficient.
    pub rolling_coeff: f64,
    /// Air resistance coefficient.
    pub air_coeff: f64,
    /// Frontal area (m²).
    pub frontal_area_m2: f64,
    /// Skid-steering resistance coefficient.
    pub steering_coeff: f64,
    /// Track ground-contact length (m).
    pub track_length_m: f64,
    /// Gravitational acceleration (m/s²).
    pub gravity: f64,
    /// Traction motor efficiency, in (0, 1].
    pub motor_eff: f64,
    /// Mechanical transmission efficiency, in (0, 1].
    pub transmission_eff: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass_kg: 9359.0,
            transmission_ratio: 14.89,
            drive_wheel_radius_m: 0.2654,
            rolling_coeff: 0.04,
            air_coeff: 1.0,
            frontal_area_m2: 3.0,
            steering_coeff: 0.6,
            track_length_m: 3.0,
            gravity: 9.81,
            motor_eff: 0.9,
            transmission_eff: 0.95,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("mass_kg", self.mass_kg),
            ("transmission_ratio", self.transmission_ratio),
            ("drive_wheel_radius_m", self.drive_wheel_radius_m),
            ("track_length_m", self.track_length_m),
            ("gravity", self.gravity),
        ];
        for (name, v) in pos {
            if !v.is_finite() || v <= 0.0 {
                return Err(PowertrainError::InvalidParam(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("motor_eff", self.motor_eff), ("transmission_eff", self.transmission_eff)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(PowertrainError::InvalidParam(format!(
                    "{name} must be in (0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Battery pack parameters. Sign convention: positive battery power discharges.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryParams {
    /// Rated capacity (coulombs; ampere-hours × 3600).
    pub capacity_coulombs: f64,
    /// Internal resistance (ohm).
    pub internal_resistance_ohm: f64,
    /// Open-circuit voltage over SOC (V).
    pub voc_curve: Curve,
    /// Lower SOC operating bound.
    pub soc_min: f64,
    /// Upper SOC operating bound.
    pub soc_max: f64,
    /// Maximum charging power (W, non-positive under the sign convention).
    pub p_charge_max_w: f64,
    /// Maximum discharging power (W, non-negative).
    pub p_discharge_max_w: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self {
            capacity_coulombs: 96.0 * 3600.0,
            internal_resistance_ohm: 0.1,
            voc_curve: Curve::new(&[(0.0, 300.0), (1.0, 340.0)]).unwrap(),
            soc_min: 0.6,
            soc_max: 0.8,
            p_charge_max_w: -60_000.0,
            p_discharge_max_w: 60_000.0,
        }
    }
}

impl BatteryParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity_coulombs > 0.0) {
            return Err(PowertrainError::InvalidParam("capacity_coulombs must be > 0".into()));
        }
        if !(self.internal_resistance_ohm > 0.0) {
            return Err(PowertrainError::InvalidParam(
                "internal_resistance_ohm must be > 0".into(),
            ));
        }
        if !(0.0 <= self.soc_min && self.soc_min < self.soc_max && self.soc_max <= 1.0) {
            return Err(PowertrainError::InvalidParam(format!(
                "need 0 <= soc_min < soc_max <= 1, got [{}, {}]",
                self.soc_min, self.soc_max
            )));
        }
        if !(self.p_charge_max_w <= 0.0 && self.p_discharge_max_w >= 0.0) {
            return Err(PowertrainError::InvalidParam(
                "need p_charge_max <= 0 <= p_discharge_max".into(),
            ));
        }
        if !self.voc_curve.is_non_decreasing() {
            return Err(PowertrainError::InvalidParam(
                "voc_curve must be non-decreasing in SOC".into(),
            ));
        }
        Ok(())
    }
}

/// Engine-generator set parameters. The engine is speed-controlled, the
/// generator torque-controlled; the two shafts are rigidly coupled.
#[derive(Debug, Clone, PartialEq)]
pub struct GensetParams {
    /// Idle (minimum controllable) engine speed (rpm).
    pub idle_speed_rpm: f64,
    /// Maximum engine speed (rpm).
    pub engine_speed_max_rpm: f64,
    /// Engine full-load torque envelope over speed (N·m over rpm).
    pub engine_torque_max: Curve,
    /// Maximum engine power (W).
    pub engine_power_max_w: f64,
    /// Generator torque envelope over speed (N·m over rpm).
    pub gen_torque_max: Curve,
    /// Generator (mechanical → electrical) efficiency, in (0, 1].
    pub gen_eff: f64,
    /// Engine rotor inertia (kg·m²).
    pub inertia_engine: f64,
    /// Generator rotor inertia (kg·m²).
    pub inertia_generator: f64,
    /// Maximum engine speed slew between control steps (rpm/s).
    pub speed_rate_max_rpm_s: f64,
    /// Maximum generator torque slew between control steps (N·m/s).
    pub torque_rate_max_nm_s: f64,
    /// Fuel rate table, torque (N·m) × speed (rpm) → g/s.
    pub fuel_map: BilinearGrid,
    /// Lower heating value of the fuel (J/g).
    pub fuel_lhv_j_per_g: f64,
}

/// Synthesized stand-in fuel map: quadratic efficiency bowl peaking at 0.36
/// near (240 N·m, 2200 rpm), floored at 0.15, with a 0.15 g/s idle flow on
/// the zero-torque row. Replaceable by a measured map loaded from CSV.
pub fn default_fuel_map() -> BilinearGrid {
    let torques: Vec<f64> = (0..=16).map(|i| i as f64 * 20.0).collect(); // 0..=320
    let speeds: Vec<f64> = (0..=12).map(|i| 800.0 + i as f64 * 200.0).collect(); // 800..=3200
    let mut values = Vec::with_capacity(torques.len() * speeds.len());
    for &t in &torques {
        for &n in &speeds {
            values.push(synth_fuel_rate(t, n));
        }
    }
    BilinearGrid::new(torques, speeds, values).unwrap()
}

fn synth_fuel_rate(torque_nm: f64, speed_rpm: f64) -> f64 {
    const IDLE_FLOW_G_S: f64 = 0.15;
    const LHV_J_PER_G: f64 = 42_500.0;
    if torque_nm == 0.0 {
        return IDLE_FLOW_G_S;
    }
    let eff = synth_engine_eff(torque_nm, speed_rpm);
    let mech_w = torque_nm * speed_rpm / TORQUE_SPEED_TO_POWER;
    mech_w / (eff * LHV_J_PER_G)
}

fn synth_engine_eff(torque_nm: f64, speed_rpm: f64) -> f64 {
    let dt = torque_nm - 240.0;
    let dn = speed_rpm - 2200.0;
    (0.36 - 3.0e-6 * dt * dt - 5.0e-8 * dn * dn).max(0.15)
}

impl Default for GensetParams {
    fn default() -> Self {
        Self {
            idle_speed_rpm: 800.0,
            engine_speed_max_rpm: 3200.0,
            engine_torque_max: Curve::new(&[
                (800.0, 230.0),
                (1200.0, 270.0),
                (1600.0, 300.0),
                (2000.0, 310.0),
                (2400.0, 310.0),
                (2800.0, 300.0),
                (3200.0, 286.5),
            ])
            .unwrap(),
            engine_power_max_w: 96_000.0,
            gen_torque_max: Curve::new(&[
                (800.0, 290.0),
                (2000.0, 290.0),
                (2400.0, 241.7),
                (2800.0, 207.1),
                (3200.0, 181.3),
            ])
            .unwrap(),
            gen_eff: 0.95,
            inertia_engine: 1.2,
            inertia_generator: 0.4,
            speed_rate_max_rpm_s: 400.0,
            torque_rate_max_nm_s: 500.0,
            fuel_map: default_fuel_map(),
            fuel_lhv_j_per_g: 42_500.0,
        }
    }
}

impl GensetParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.idle_speed_rpm > 0.0 && self.idle_speed_rpm < self.engine_speed_max_rpm) {
            return Err(PowertrainError::InvalidParam(
                "need 0 < idle_speed < engine_speed_max".into(),
            ));
        }
        if !(self.gen_eff > 0.0 && self.gen_eff <= 1.0) {
            return Err(PowertrainError::InvalidParam("gen_eff must be in (0, 1]".into()));
        }
        for (name, v) in [
            ("engine_power_max_w", self.engine_power_max_w),
            ("speed_rate_max_rpm_s", self.speed_rate_max_rpm_s),
            ("torque_rate_max_nm_s", self.torque_rate_max_nm_s),
            ("fuel_lhv_j_per_g", self.fuel_lhv_j_per_g),
            ("inertia_engine", self.inertia_engine),
            ("inertia_generator", self.inertia_generator),
        ] {
            if !(v > 0.0) {
                return Err(PowertrainError::InvalidParam(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, curve) in [
            ("engine_torque_max", &self.engine_torque_max),
            ("gen_torque_max", &self.gen_torque_max),
        ] {
            if curve.x_min() > self.idle_speed_rpm || curve.x_max() < self.engine_speed_max_rpm {
                return Err(PowertrainError::InvalidParam(format!(
                    "{name} must cover [{}, {}] rpm",
                    self.idle_speed_rpm, self.engine_speed_max_rpm
                )));
            }
        }
        Ok(())
    }

    /// Peak (torque-weighted) conversion efficiency of the fuel map:
    /// max over nodes of mech power / (fuel rate × LHV).
    pub fn fuel_map_peak_eff(&self) -> f64 {
        let mut best: f64 = 0.0;
        for (xi, &t) in self.fuel_map.xs().iter().enumerate() {
            for (yi, &n) in self.fuel_map.ys().iter().enumerate() {
                let fuel = self.fuel_map.node(xi, yi);
                if t > 0.0 && fuel > 0.0 {
                    let eff = t * n / TORQUE_SPEED_TO_POWER / (fuel * self.fuel_lhv_j_per_g);
                    best = best.max(eff);
                }
            }
        }
        best
    }

    /// Highest electrical power the genset can hold steadily (T_e = T_g),
    /// limited by the tighter of the two torque envelopes, swept over the
    /// fuel-map speed columns.
    pub fn max_steady_elec_power_w(&self) -> f64 {
        let mut best: f64 = 0.0;
        for &n in self.fuel_map.ys() {
            if n < self.idle_speed_rpm || n > self.engine_speed_max_rpm {
                continue;
            }
            let t_lim = self
                .engine_torque_max
                .eval_clamped(n)
                .min(self.gen_torque_max.eval_clamped(n));
            best = best.max(t_lim * n / TORQUE_SPEED_TO_POWER * self.gen_eff);
        }
        best
    }
}

/// One steady operating point of the rigidly coupled engine-generator unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    /// Shaft speed (rpm), common to engine and generator.
    pub speed_rpm: f64,
    /// Engine brake torque (N·m).
    pub engine_torque_nm: f64,
    /// Generator electromagnetic torque (N·m).
    pub gen_torque_nm: f64,
    /// Engine mechanical power (W) = torque · speed / 9.55.
    pub mech_power_w: f64,
    /// Electrical power delivered to the DC bus (W).
    pub elec_power_w: f64,
    /// Fuel rate (g/s).
    pub fuel_rate_g_s: f64,
}

/// Vehicle demand power (W) at the DC bus.
///
/// The tractive term combines rolling, aerodynamic (with `v` in km/h),
/// inertial and grade forces; skid steering adds a yaw-rate term that
/// dissipates power for either turn direction. Negative tractive power is
/// regeneration: efficiencies then multiply instead of divide.
pub fn demand_power(
    v_kmh: f64,
    accel_ms2: f64,
    slope_rad: f64,
    yaw_rad_s: f64,
    p: &VehicleParams,
) -> Result<f64> {
    for (name, v) in [
        ("v", v_kmh),
        ("accel", accel_ms2),
        ("slope", slope_rad),
        ("yaw", yaw_rad_s),
    ] {
        if !v.is_finite() {
            return Err(PowertrainError::NonFinite(name));
        }
    }
    if v_kmh < 0.0 {
        return Err(PowertrainError::NegativeVelocity(v_kmh));
    }
    let mg = p.mass_kg * p.gravity;
    let tractive_force = p.rolling_coeff * mg
        + p.air_coeff * p.frontal_area_m2 * v_kmh * v_kmh / 21.15
        + p.mass_kg * accel_ms2
        + mg * slope_rad.sin();
    let steering = 0.25 * p.steering_coeff * mg * yaw_rad_s.abs() * p.track_length_m;
    let bus_power = tractive_force * v_kmh / 3.6 + steering;
    if bus_power >= 0.0 {
        Ok(bus_power / (p.motor_eff * p.transmission_eff))
    } else {
        Ok(bus_power * p.motor_eff * p.transmission_eff)
    }
}

/// Open-circuit voltage at the given SOC (piecewise-linear lookup).
pub fn voc_lookup(soc: f64, b: &BatteryParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&soc) {
        return Err(PowertrainError::SocOutOfBounds { soc, lo: 0.0, hi: 1.0 });
    }
    Ok(b.voc_curve.eval(soc)?)
}

/// Advance the battery SOC by `dt` seconds at constant terminal power `p_b_w`
/// (positive discharges). Errors when the internal-resistance discriminant is
/// negative or the result leaves the operating band.
pub fn battery_soc_step(soc: f64, p_b_w: f64, b: &BatteryParams, dt_s: f64) -> Result<f64> {
    if !p_b_w.is_finite() {
        return Err(PowertrainError::NonFinite("p_b_w"));
    }
    let voc = voc_lookup(soc, b)?;
    let r = b.internal_resistance_ohm;
    let disc = voc * voc - 4.0 * r * p_b_w;
    if disc < 0.0 {
        return Err(PowertrainError::InfeasiblePower { p_w: p_b_w, voc });
    }
    let current = (voc - disc.sqrt()) / (2.0 * r);
    let next = soc - dt_s * current / b.capacity_coulombs;
    if next < b.soc_min || next > b.soc_max {
        return Err(PowertrainError::SocOutOfBounds {
            soc: next,
            lo: b.soc_min,
            hi: b.soc_max,
        });
    }
    Ok(next)
}

/// Battery terminal power (W) that produces the SOC change `dsoc` over one
/// 1-second step starting from `soc`. Exact algebraic inverse of
/// [`battery_soc_step`] with `dt_s = 1`.
pub fn battery_power_from_dsoc(dsoc: f64, soc: f64, b: &BatteryParams) -> Result<f64> {
    if !dsoc.is_finite() {
        return Err(PowertrainError::NonFinite("dsoc"));
    }
    let voc = voc_lookup(soc, b)?;
    let q = b.capacity_coulombs * dsoc;
    Ok(-voc * q - q * q * b.internal_resistance_ohm)
}

/// Solve the genset for a target electrical power at a commanded shaft speed.
///
/// The generator torque follows from the bus power; the engine torque adds
/// the inertia torque of the commanded speed slew `dn_dt` (rpm/s, π/30
/// converts to rad/s²). Engine torque is floored at zero — on overrun the
/// fuel injection is cut and the shaft is braked by the generator alone.
pub fn genset_solve(
    speed_rpm: f64,
    p_g_target_w: f64,
    dn_dt_rpm_s: f64,
    g: &GensetParams,
) -> Result<OperatingPoint> {
    if !speed_rpm.is_finite() || !p_g_target_w.is_finite() || !dn_dt_rpm_s.is_finite() {
        return Err(PowertrainError::NonFinite("genset input"));
    }
    if p_g_target_w < 0.0 {
        return Err(PowertrainError::NegativeGensetPower(p_g_target_w));
    }
    if speed_rpm < g.idle_speed_rpm || speed_rpm > g.engine_speed_max_rpm {
        return Err(PowertrainError::SpeedOutOfRange {
            speed: speed_rpm,
            lo: g.idle_speed_rpm,
            hi: g.engine_speed_max_rpm,
        });
    }
    let gen_torque = TORQUE_SPEED_TO_POWER * p_g_target_w / (speed_rpm * g.gen_eff);
    let gen_limit = g.gen_torque_max.eval_clamped(speed_rpm);
    if gen_torque > gen_limit {
        return Err(PowertrainError::TorqueEnvelope {
            side: "generator",
            torque: gen_torque,
            limit: gen_limit,
            speed: speed_rpm,
        });
    }
    let inertia_torque =
        std::f64::consts::PI / 30.0 * (g.inertia_engine + g.inertia_generator) * dn_dt_rpm_s;
    let engine_torque = (gen_torque + inertia_torque).max(0.0);
    let engine_limit = g.engine_torque_max.eval_clamped(speed_rpm);
    if engine_torque > engine_limit {
        return Err(PowertrainError::TorqueEnvelope {
            side: "engine",
            torque: engine_torque,
            limit: engine_limit,
            speed: speed_rpm,
        });
    }
    let fuel = fuel_rate(engine_torque, speed_rpm, g)?;
    Ok(OperatingPoint {
        speed_rpm,
        engine_torque_nm: engine_torque,
        gen_torque_nm: gen_torque,
        mech_power_w: engine_torque * speed_rpm / TORQUE_SPEED_TO_POWER,
        elec_power_w: p_g_target_w,
        fuel_rate_g_s: fuel,
    })
}

/// Fuel rate (g/s) at an engine operating point, by bilinear interpolation of
/// the fuel map. Errors on queries outside the tabulated envelope.
pub fn fuel_rate(engine_torque_nm: f64, speed_rpm: f64, g: &GensetParams) -> Result<f64> {
    Ok(g.fuel_map.eval(engine_torque_nm, speed_rpm)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demand_power_zero_at_rest() {
        let p = VehicleParams::default();
        assert_eq!(demand_power(0.0, 0.0, 0.0, 0.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn demand_power_cruise_matches_hand_evaluation() {
        // 36 km/h steady cruise on flat ground: rolling + air only, divided
        // by the driveline efficiency.
        let p = VehicleParams::default();
        let rolling = 0.04 * 9359.0 * 9.81;
        let air = 1.0 * 3.0 * 36.0 * 36.0 / 21.15;
        let expected = (rolling + air) * 10.0 / (0.9 * 0.95);
        let got = demand_power(36.0, 0.0, 0.0, 0.0, &p).unwrap();
        assert!((got - expected).abs() < 1e-9, "got {got}, want {expected}");
        // ballpark from evaluating the terms: ~45.1 kW
        assert!((got - 45_100.0).abs() < 100.0);
    }

    #[test]
    fn demand_power_pure_steering() {
        let p = VehicleParams::default();
        let expected = 0.25 * 0.6 * 9359.0 * 9.81 * 0.5 * 3.0 / (0.9 * 0.95);
        let got = demand_power(0.0, 0.0, 0.0, 0.5, &p).unwrap();
        assert!((got - expected).abs() < 1e-9);
        assert!((got - 24_160.0).abs() < 5.0);
        // either turn direction dissipates the same power
        let left = demand_power(0.0, 0.0, 0.0, -0.5, &p).unwrap();
        assert_eq!(got, left);
    }

    #[test]
    fn demand_power_regeneration_multiplies_efficiencies() {
        let p = VehicleParams::default();
        // hard braking downhill: tractive power negative
        let v = 36.0;
        let a = -2.0;
        let rolling = 0.04 * 9359.0 * 9.81;
        let air = 1.0 * 3.0 * v * v / 21.15;
        let force = rolling + air + 9359.0 * a;
        assert!(force < 0.0);
        let expected = force * 10.0 * 0.9 * 0.95;
        let got = demand_power(v, a, 0.0, 0.0, &p).unwrap();
        assert!((got - expected).abs() < 1e-9);
    }

    #[test]
    fn demand_power_rejects_bad_input() {
        let p = VehicleParams::default();
        assert!(demand_power(-1.0, 0.0, 0.0, 0.0, &p).is_err());
        assert!(demand_power(f64::NAN, 0.0, 0.0, 0.0, &p).is_err());
        assert!(demand_power(10.0, f64::INFINITY, 0.0, 0.0, &p).is_err());
    }

    #[test]
    fn demand_power_monotone_in_each_argument() {
        let p = VehicleParams::default();
        let base = demand_power(20.0, 0.5, 0.05, 0.2, &p).unwrap();
        assert!(demand_power(25.0, 0.5, 0.05, 0.2, &p).unwrap() >= base);
        assert!(demand_power(20.0, 0.8, 0.05, 0.2, &p).unwrap() >= base);
        assert!(demand_power(20.0, 0.5, 0.10, 0.2, &p).unwrap() >= base);
        assert!(demand_power(20.0, 0.5, 0.05, 0.4, &p).unwrap() >= base);
    }

    #[test]
    fn voc_default_curve() {
        let b = BatteryParams::default();
        assert!((voc_lookup(0.7, &b).unwrap() - 328.0).abs() < 1e-12);
        assert_eq!(voc_lookup(0.0, &b).unwrap(), 300.0);
        assert!(voc_lookup(-0.1, &b).is_err());
        assert!(voc_lookup(1.1, &b).is_err());
    }

    #[test]
    fn battery_step_zero_power_holds_soc() {
        let b = BatteryParams::default();
        assert_eq!(battery_soc_step(0.7, 0.0, &b, 1.0).unwrap(), 0.7);
    }

    #[test]
    fn battery_step_discharge_matches_hand_evaluation() {
        // 32 kW discharge from soc 0.7: current from the quadratic bus
        // equation, then divide by capacity.
        let b = BatteryParams::default();
        let voc: f64 = 328.0;
        let disc = voc * voc - 4.0 * 0.1 * 32_000.0;
        let current = (voc - disc.sqrt()) / 0.2;
        let expected = 0.7 - current / 345_600.0;
        let got = battery_soc_step(0.7, 32_000.0, &b, 1.0).unwrap();
        assert!((got - expected).abs() < 1e-15);
        // the drop is on the order of 3e-4
        assert!((0.7 - got) > 2.5e-4 && (0.7 - got) < 3.5e-4);
    }

    #[test]
    fn battery_step_rejects_negative_discriminant() {
        let b = BatteryParams::default();
        // 4 R p > V_oc²  →  p > 328²/0.4 ≈ 268.9 kW
        let err = battery_soc_step(0.7, 300_000.0, &b, 1.0).unwrap_err();
        assert!(matches!(err, PowertrainError::InfeasiblePower { .. }));
    }

    #[test]
    fn battery_step_rejects_bound_violation() {
        let b = BatteryParams::default();
        let err = battery_soc_step(0.601, 50_000.0, &b, 10.0).unwrap_err();
        assert!(matches!(err, PowertrainError::SocOutOfBounds { .. }));
    }

    #[test]
    fn battery_step_strictly_decreasing_in_power() {
        let b = BatteryParams::default();
        let mut prev = f64::INFINITY;
        for i in 0..20 {
            let p = -40_000.0 + i as f64 * 4000.0;
            let soc = battery_soc_step(0.7, p, &b, 1.0).unwrap();
            assert!(soc < prev, "soc must strictly decrease in p_b");
            prev = soc;
        }
    }

    #[test]
    fn battery_power_from_dsoc_examples() {
        let b = BatteryParams::default();
        assert_eq!(battery_power_from_dsoc(0.0, 0.7, &b).unwrap(), 0.0);
        // round-trip inverse of the 32 kW discharge example
        let after = battery_soc_step(0.7, 32_000.0, &b, 1.0).unwrap();
        let p = battery_power_from_dsoc(after - 0.7, 0.7, &b).unwrap();
        assert!((p - 32_000.0).abs() < 1e-6, "got {p}");
        // the resistive loss term is sign-independent: it is paid on top of
        // the stored energy when charging and taken out of it when
        // discharging, so at equal |dsoc| the charge magnitude is larger
        let d = 2.99e-4;
        let p_dis = battery_power_from_dsoc(-d, 0.7, &b).unwrap();
        let p_chg = battery_power_from_dsoc(d, 0.7, &b).unwrap();
        assert!(p_dis > 0.0 && p_chg < 0.0);
        let q = 345_600.0 * d;
        let loss = q * q * 0.1;
        assert!((p_dis - (328.0 * q - loss)).abs() < 1e-9);
        assert!((p_chg - (-328.0 * q - loss)).abs() < 1e-9);
        assert!(p_chg.abs() > p_dis.abs());
    }

    #[test]
    fn battery_round_trip_identity() {
        let b = BatteryParams::default();
        for i in 0..50 {
            let soc = 0.61 + 0.18 * (i as f64 / 49.0);
            for j in 0..40 {
                let dsoc = -5.0e-4 + 1.0e-3 * (j as f64 / 39.0);
                let p = battery_power_from_dsoc(dsoc, soc, &b).unwrap();
                let next = battery_soc_step(soc, p, &b, 1.0).unwrap();
                assert!(
                    ((next - soc) - dsoc).abs() < 1e-10,
                    "round trip failed at soc={soc} dsoc={dsoc}"
                );
            }
        }
    }

    #[test]
    fn genset_zero_power_idles() {
        let g = GensetParams::default();
        let op = genset_solve(2000.0, 0.0, 0.0, &g).unwrap();
        assert_eq!(op.gen_torque_nm, 0.0);
        assert_eq!(op.engine_torque_nm, 0.0);
        assert_eq!(op.mech_power_w, 0.0);
    }

    #[test]
    fn genset_rated_point_mech_power() {
        // electrical target that puts the generator exactly at its rated
        // torque: mech power = 290·2000/9.55
        let g = GensetParams::default();
        let p_elec = 290.0 * 2000.0 / TORQUE_SPEED_TO_POWER * g.gen_eff;
        let op = genset_solve(2000.0, p_elec, 0.0, &g).unwrap();
        assert!((op.gen_torque_nm - 290.0).abs() < 1e-9);
        let mech = 290.0 * 2000.0 / 9.55;
        assert!((op.mech_power_w - mech).abs() < 1e-9);
        assert!((mech - 60_733.0).abs() < 1.0);
        // mech power identity is exact
        assert_eq!(
            op.mech_power_w,
            op.engine_torque_nm * op.speed_rpm / TORQUE_SPEED_TO_POWER
        );
    }

    #[test]
    fn genset_envelope_violation() {
        let g = GensetParams::default();
        // demand far beyond the generator envelope at 2000 rpm
        let err = genset_solve(2000.0, 90_000.0, 0.0, &g).unwrap_err();
        assert!(matches!(err, PowertrainError::TorqueEnvelope { side: "generator", .. }));
        assert!(genset_solve(500.0, 0.0, 0.0, &g).is_err());
        assert!(genset_solve(2000.0, -1.0, 0.0, &g).is_err());
    }

    #[test]
    fn genset_inertia_term_adds_engine_torque() {
        let g = GensetParams::default();
        let op = genset_solve(2000.0, 20_000.0, 300.0, &g).unwrap();
        let expected_extra = std::f64::consts::PI / 30.0 * (1.2 + 0.4) * 300.0;
        assert!((op.engine_torque_nm - op.gen_torque_nm - expected_extra).abs() < 1e-12);
        // decelerating with light load: fuel-cut floor at zero torque
        let op2 = genset_solve(2000.0, 1_000.0, -400.0, &g).unwrap();
        assert_eq!(op2.engine_torque_nm, 0.0);
    }

    #[test]
    fn fuel_map_idle_and_node_identity() {
        let g = GensetParams::default();
        // idle flow on the zero-torque row
        assert!((fuel_rate(0.0, 800.0, &g).unwrap() - 0.15).abs() < 1e-12);
        // grid nodes are reproduced exactly
        let node = g.fuel_map.node(12, 7); // torque 240, speed 2200
        assert_eq!(fuel_rate(240.0, 2200.0, &g).unwrap(), node);
        // midpoint between two speed nodes at fixed torque: arithmetic mean
        let a = fuel_rate(240.0, 2200.0, &g).unwrap();
        let b = fuel_rate(240.0, 2400.0, &g).unwrap();
        let mid = fuel_rate(240.0, 2300.0, &g).unwrap();
        assert!((mid - 0.5 * (a + b)).abs() < 1e-12);
        // out-of-envelope queries rejected
        assert!(fuel_rate(-1.0, 2000.0, &g).is_err());
        assert!(fuel_rate(100.0, 5000.0, &g).is_err());
    }

    #[test]
    fn fuel_map_non_negative_and_peak_eff() {
        let g = GensetParams::default();
        for (xi, _) in g.fuel_map.xs().iter().enumerate() {
            for (yi, _) in g.fuel_map.ys().iter().enumerate() {
                assert!(g.fuel_map.node(xi, yi) >= 0.0);
            }
        }
        // the synthesized bowl peaks at 0.36 on the (240 N·m, 2200 rpm) node
        assert!((g.fuel_map_peak_eff() - 0.36).abs() < 1e-12);
    }

    #[test]
    fn rated_point_inside_generator_envelope() {
        let g = GensetParams::default();
        assert!(g.gen_torque_max.eval_clamped(2000.0) >= 290.0);
    }

    #[test]
    fn default_params_validate() {
        VehicleParams::default().validate().unwrap();
        BatteryParams::default().validate().unwrap();
        GensetParams::default().validate().unwrap();
    }
}
