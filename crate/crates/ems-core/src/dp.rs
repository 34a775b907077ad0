//! Finite-horizon power-split optimization by forward dynamic programming
//! over a SOC × engine-speed lattice.
//!
//! Each transition fixes the SOC change (hence battery power, through the
//! exact inverse of the SOC dynamics), balances the bus to get the genset
//! target, solves the rigid engine-generator coupling at the target speed and
//! prices the step as ω₁·fuel + ω₂·(SOC − SOC_target)². Infeasible
//! transitions (battery power bounds, speed slew, torque envelopes, negative
//! genset power) are explicit markers the recursion treats as +∞. Traceback
//! from the cheapest terminal node recovers the optimal trajectory.
//!
//! With the `parallel` feature, each stage relaxes its target nodes over
//! rayon; every node scans predecessors in a fixed order, so the result is
//! identical to the sequential fallback.

use crate::config::PowertrainParams;
use crate::kmh_to_ms;
use crate::powertrain::{
    battery_power_from_dsoc, demand_power, genset_solve, OperatingPoint, PowertrainError,
};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use thiserror::Error;

/// Why a transition cannot be taken. The solver treats any of these as an
/// infinite-cost edge rather than an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Infeasible {
    /// Battery power outside [p_charge_max, p_discharge_max].
    BatteryPower,
    /// SOC endpoint outside the allowed band.
    SocBounds,
    /// Engine speed slew beyond speed_rate_max·Δt.
    SpeedRate,
    /// Genset would have to absorb power (series layout has no reverse path).
    NegativeGensetPower,
    /// Generator or engine torque envelope exceeded, or speed out of range.
    Genset,
}

#[derive(Debug, Error)]
pub enum DpError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("no feasible transition into stage {0}")]
    InfeasibleAtStage(usize),
    #[error("no feasible path reaches the terminal SOC target")]
    InfeasibleTerminal,
    #[error(transparent)]
    Powertrain(#[from] PowertrainError),
}

/// Terminal handling of the SOC state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalMode {
    /// Deviation penalized through ω₂ only; any terminal node may win.
    Soft,
    /// Terminal SOC pinned to the grid level nearest soc_target.
    HardSocTarget,
}

/// The optimal control problem over a fixed velocity/yaw/slope preview.
#[derive(Debug, Clone)]
pub struct OcpProblem<'a> {
    /// Velocity preview (km/h), one entry per stage.
    pub v_kmh: Vec<f64>,
    /// Yaw rate preview (rad/s), same length.
    pub yaw_rad_s: Vec<f64>,
    /// Slope preview (rad), same length.
    pub slope_rad: Vec<f64>,
    pub soc_init: f64,
    pub soc_target: f64,
    /// Engine speed at stage 0 (rpm); the first transition's slew is measured
    /// from here.
    pub speed_init_rpm: f64,
    /// Fuel weight ω₁ (per gram).
    pub w_fuel: f64,
    /// SOC-deviation weight ω₂ (per SOC² per second).
    pub w_soc: f64,
    pub dt_s: f64,
    pub terminal: TerminalMode,
    pub params: &'a PowertrainParams,
}

impl<'a> OcpProblem<'a> {
    pub fn horizon(&self) -> usize {
        self.v_kmh.len()
    }

    pub fn validate(&self) -> Result<(), DpError> {
        let n = self.v_kmh.len();
        if n == 0 {
            return Err(DpError::InvalidProblem("horizon must be at least 1".into()));
        }
        if self.yaw_rad_s.len() != n || self.slope_rad.len() != n {
            return Err(DpError::InvalidProblem(
                "yaw and slope previews must match the velocity preview length".into(),
            ));
        }
        if self.v_kmh.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DpError::InvalidProblem("velocity preview must be finite and >= 0".into()));
        }
        let b = &self.params.battery;
        if !(b.soc_min..=b.soc_max).contains(&self.soc_init) {
            return Err(DpError::InvalidProblem(format!(
                "soc_init {} outside [{}, {}]",
                self.soc_init, b.soc_min, b.soc_max
            )));
        }
        if self.w_fuel < 0.0 || self.w_soc < 0.0 {
            return Err(DpError::InvalidProblem("weights must be non-negative".into()));
        }
        if self.dt_s <= 0.0 {
            return Err(DpError::InvalidProblem("dt must be positive".into()));
        }
        Ok(())
    }

    /// Per-stage acceleration (m/s²) implied by the velocity preview; the
    /// final stage holds speed.
    pub fn accel_ms2(&self, k: usize) -> f64 {
        if k + 1 < self.v_kmh.len() {
            (kmh_to_ms(self.v_kmh[k + 1]) - kmh_to_ms(self.v_kmh[k])) / self.dt_s
        } else {
            0.0
        }
    }
}

/// Discretization of the (SOC, engine speed) state space. SOC levels are
/// `soc_cells + 1` equally spaced values; speed levels are `q` equally spaced
/// values (a single level degenerates to SOC-only DP at fixed speed).
#[derive(Debug, Clone, PartialEq)]
pub struct SocGrid {
    soc_levels: Vec<f64>,
    speed_levels: Vec<f64>,
}

impl SocGrid {
    pub fn new(
        soc_lo: f64,
        soc_hi: f64,
        soc_cells: usize,
        speed_lo: f64,
        speed_hi: f64,
        speed_levels: usize,
    ) -> Result<Self, DpError> {
        if !(soc_lo < soc_hi) || soc_cells < 2 {
            return Err(DpError::InvalidGrid(format!(
                "need soc_lo < soc_hi and at least 2 cells, got [{soc_lo}, {soc_hi}] x {soc_cells}"
            )));
        }
        if speed_levels == 0 || (speed_levels > 1 && !(speed_lo < speed_hi)) {
            return Err(DpError::InvalidGrid("need at least one speed level".into()));
        }
        let soc_levels = (0..=soc_cells)
            .map(|i| soc_lo + (soc_hi - soc_lo) * i as f64 / soc_cells as f64)
            .collect();
        let speed_levels = if speed_levels == 1 {
            vec![speed_lo]
        } else {
            (0..speed_levels)
                .map(|i| speed_lo + (speed_hi - speed_lo) * i as f64 / (speed_levels - 1) as f64)
                .collect()
        };
        Ok(Self { soc_levels, speed_levels })
    }

    /// Default lattice: SOC over the battery band, speed from idle to max.
    pub fn from_params(
        p: &PowertrainParams,
        soc_cells: usize,
        speed_levels: usize,
    ) -> Result<Self, DpError> {
        Self::new(
            p.battery.soc_min,
            p.battery.soc_max,
            soc_cells,
            p.genset.idle_speed_rpm,
            p.genset.engine_speed_max_rpm,
            speed_levels,
        )
    }

    pub fn soc_levels(&self) -> &[f64] {
        &self.soc_levels
    }

    pub fn speed_levels(&self) -> &[f64] {
        &self.speed_levels
    }

    pub fn n_nodes(&self) -> usize {
        self.soc_levels.len() * self.speed_levels.len()
    }

    pub fn nearest_soc(&self, soc: f64) -> usize {
        nearest(&self.soc_levels, soc)
    }

    pub fn nearest_speed(&self, rpm: f64) -> usize {
        nearest(&self.speed_levels, rpm)
    }
}

fn nearest(levels: &[f64], x: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &l) in levels.iter().enumerate() {
        let d = (l - x).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Everything known about one feasible transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTransition {
    pub cost: f64,
    pub fuel_g: f64,
    pub p_req_w: f64,
    pub p_b_w: f64,
    pub p_g_w: f64,
    pub op: OperatingPoint,
}

/// Price one lattice transition at stage `k`; `Err` is the infeasible marker.
pub fn stage_cost(
    soc_from: f64,
    soc_to: f64,
    speed_from_rpm: f64,
    speed_to_rpm: f64,
    k: usize,
    prob: &OcpProblem,
) -> Result<StageTransition, Infeasible> {
    let b = &prob.params.battery;
    if soc_from < b.soc_min || soc_from > b.soc_max || soc_to < b.soc_min || soc_to > b.soc_max {
        return Err(Infeasible::SocBounds);
    }
    let dsoc_rate = (soc_to - soc_from) / prob.dt_s;
    let p_b = battery_power_from_dsoc(dsoc_rate, soc_from, b).map_err(|_| Infeasible::SocBounds)?;
    let p_req = demand_power(
        prob.v_kmh[k],
        prob.accel_ms2(k),
        prob.slope_rad[k],
        prob.yaw_rad_s[k],
        &prob.params.vehicle,
    )
    .map_err(|_| Infeasible::SocBounds)?;
    transition_eval(soc_to, p_b, speed_from_rpm, speed_to_rpm, p_req, prob)
}

/// Shared evaluation core: battery power and demand already resolved.
fn transition_eval(
    soc_to: f64,
    p_b: f64,
    speed_from_rpm: f64,
    speed_to_rpm: f64,
    p_req: f64,
    prob: &OcpProblem,
) -> Result<StageTransition, Infeasible> {
    let b = &prob.params.battery;
    let g = &prob.params.genset;
    if p_b < b.p_charge_max_w || p_b > b.p_discharge_max_w {
        return Err(Infeasible::BatteryPower);
    }
    if (speed_to_rpm - speed_from_rpm).abs() > g.speed_rate_max_rpm_s * prob.dt_s + 1e-9 {
        return Err(Infeasible::SpeedRate);
    }
    let p_g = p_req - p_b;
    if p_g < 0.0 {
        return Err(Infeasible::NegativeGensetPower);
    }
    let dn_dt = (speed_to_rpm - speed_from_rpm) / prob.dt_s;
    let op = genset_solve(speed_to_rpm, p_g, dn_dt, g).map_err(|_| Infeasible::Genset)?;
    let dev = soc_to - prob.soc_target;
    let cost = prob.w_fuel * op.fuel_rate_g_s * prob.dt_s + prob.w_soc * dev * dev * prob.dt_s;
    Ok(StageTransition {
        cost,
        fuel_g: op.fuel_rate_g_s * prob.dt_s,
        p_req_w: p_req,
        p_b_w: p_b,
        p_g_w: p_g,
        op,
    })
}

/// One step of the traced optimal trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryStep {
    pub engine_speed_rpm: f64,
    pub gen_torque_nm: f64,
    pub engine_torque_nm: f64,
    pub p_req_w: f64,
    pub p_b_w: f64,
    pub p_g_w: f64,
    pub fuel_g: f64,
    pub fuel_rate_g_s: f64,
    pub cost: f64,
}

/// Solver output: the cost-to-come lattice, the predecessor policy and the
/// traced optimal trajectory.
#[derive(Debug, Clone)]
pub struct DpSolution {
    pub total_cost: f64,
    pub total_fuel_g: f64,
    /// Stage states along the optimum: (soc, engine speed rpm), length n+1.
    pub states: Vec<(f64, f64)>,
    /// Stage controls along the optimum, length n.
    pub steps: Vec<TrajectoryStep>,
    /// cost_to_come[stage][node], node = soc_index · q + speed_index.
    pub cost_to_come: Vec<Vec<f64>>,
    /// policy[stage][node] = predecessor node at the previous stage
    /// (`u32::MAX` where unreached).
    pub policy: Vec<Vec<u32>>,
    /// Distance from soc_init to its snapped grid level.
    pub soc_snap: f64,
    /// Distance from speed_init to its snapped grid level.
    pub speed_snap: f64,
    /// Set by callers that retried a hard terminal as soft.
    pub relaxed_terminal: bool,
}

pub const UNREACHED: u32 = u32::MAX;

/// Battery-power lookup per (soc index, cell delta): `None` marks pairs the
/// battery cannot realize within its power bounds.
struct BatteryTable {
    /// Maximum cells the SOC may drop in one step (discharge).
    max_down: usize,
    /// Maximum cells the SOC may rise in one step (charge).
    max_up: usize,
    width: usize,
    p_b: Vec<Option<f64>>,
}

impl BatteryTable {
    fn build(grid: &SocGrid, prob: &OcpProblem) -> Self {
        let b = &prob.params.battery;
        let levels = &grid.soc_levels;
        let n = levels.len();
        let mut max_down = 0usize;
        let mut max_up = 0usize;
        for si in 0..n {
            let soc = levels[si];
            for sj in (0..si).rev() {
                match battery_power_from_dsoc((levels[sj] - soc) / prob.dt_s, soc, b) {
                    Ok(p) if p <= b.p_discharge_max_w => max_down = max_down.max(si - sj),
                    _ => break,
                }
            }
            for sj in si + 1..n {
                match battery_power_from_dsoc((levels[sj] - soc) / prob.dt_s, soc, b) {
                    Ok(p) if p >= b.p_charge_max_w => max_up = max_up.max(sj - si),
                    _ => break,
                }
            }
        }
        let width = max_down + max_up + 1;
        let mut p_b = vec![None; n * width];
        for si in 0..n {
            let soc = levels[si];
            for (slot, delta) in (-(max_down as isize)..=(max_up as isize)).enumerate() {
                let sj = si as isize + delta;
                if sj < 0 || sj >= n as isize {
                    continue;
                }
                if let Ok(p) = battery_power_from_dsoc((levels[sj as usize] - soc) / prob.dt_s, soc, b) {
                    if p >= b.p_charge_max_w && p <= b.p_discharge_max_w {
                        p_b[si * width + slot] = Some(p);
                    }
                }
            }
        }
        Self { max_down, max_up, width, p_b }
    }

    fn lookup(&self, si: usize, sj: usize) -> Option<f64> {
        let delta = sj as isize - si as isize;
        if delta < -(self.max_down as isize) || delta > self.max_up as isize {
            return None;
        }
        let slot = (delta + self.max_down as isize) as usize;
        self.p_b[si * self.width + slot]
    }
}

/// Solve the problem on the lattice; parallel over target nodes when the
/// `parallel` feature is active.
pub fn dp_solve(prob: &OcpProblem, grid: &SocGrid) -> Result<DpSolution, DpError> {
    solve_impl(prob, grid, cfg!(feature = "parallel"))
}

/// Always-sequential solve; exists so the two paths can be compared.
pub fn dp_solve_serial(prob: &OcpProblem, grid: &SocGrid) -> Result<DpSolution, DpError> {
    solve_impl(prob, grid, false)
}

fn solve_impl(prob: &OcpProblem, grid: &SocGrid, parallel: bool) -> Result<DpSolution, DpError> {
    prob.validate()?;
    let n = prob.horizon();
    let n_soc = grid.soc_levels.len();
    let n_speed = grid.speed_levels.len();
    let n_nodes = n_soc * n_speed;

    let si0 = grid.nearest_soc(prob.soc_init);
    let qi0 = grid.nearest_speed(prob.speed_init_rpm);
    let soc_snap = (grid.soc_levels[si0] - prob.soc_init).abs();
    let speed_snap = (grid.speed_levels[qi0] - prob.speed_init_rpm).abs();

    let battery = BatteryTable::build(grid, prob);
    let q_window = if n_speed > 1 {
        let speed_step = grid.speed_levels[1] - grid.speed_levels[0];
        ((prob.params.genset.speed_rate_max_rpm_s * prob.dt_s + 1e-9) / speed_step) as usize
    } else {
        0
    };

    let mut p_req = Vec::with_capacity(n);
    for k in 0..n {
        p_req.push(demand_power(
            prob.v_kmh[k],
            prob.accel_ms2(k),
            prob.slope_rad[k],
            prob.yaw_rad_s[k],
            &prob.params.vehicle,
        )?);
    }

    let mut cost = vec![vec![f64::INFINITY; n_nodes]; n + 1];
    let mut policy = vec![vec![UNREACHED; n_nodes]; n + 1];
    cost[0][si0 * n_speed + qi0] = 0.0;

    // bounding box of reachable nodes at the current stage
    let mut box_si = (si0, si0);
    let mut box_qi = (qi0, qi0);

    for k in 0..n {
        let t_si = (
            box_si.0.saturating_sub(battery.max_down),
            (box_si.1 + battery.max_up).min(n_soc - 1),
        );
        let t_qi = (box_qi.0.saturating_sub(q_window), (box_qi.1 + q_window).min(n_speed - 1));
        let targets: Vec<usize> = (t_si.0..=t_si.1)
            .flat_map(|sj| (t_qi.0..=t_qi.1).map(move |qj| sj * n_speed + qj))
            .collect();

        let prev = &cost[k];
        let relax = |&node: &usize| -> (f64, u32) {
            let sj = node / n_speed;
            let qj = node % n_speed;
            let soc_to = grid.soc_levels[sj];
            let speed_to = grid.speed_levels[qj];
            let si_lo = sj.saturating_sub(battery.max_up).max(box_si.0);
            let si_hi = (sj + battery.max_down).min(box_si.1);
            let qi_lo = qj.saturating_sub(q_window).max(box_qi.0);
            let qi_hi = (qj + q_window).min(box_qi.1);
            let mut best = f64::INFINITY;
            let mut best_pred = UNREACHED;
            for si in si_lo..=si_hi {
                let Some(p_b) = battery.lookup(si, sj) else { continue };
                for qi in qi_lo..=qi_hi {
                    let c_prev = prev[si * n_speed + qi];
                    if !c_prev.is_finite() {
                        continue;
                    }
                    if let Ok(t) = transition_eval(
                        soc_to,
                        p_b,
                        grid.speed_levels[qi],
                        speed_to,
                        p_req[k],
                        prob,
                    ) {
                        let total = c_prev + t.cost;
                        if total < best {
                            best = total;
                            best_pred = (si * n_speed + qi) as u32;
                        }
                    }
                }
            }
            (best, best_pred)
        };

        #[cfg(feature = "parallel")]
        let results: Vec<(f64, u32)> = if parallel {
            targets.par_iter().map(relax).collect()
        } else {
            targets.iter().map(relax).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<(f64, u32)> = {
            let _ = parallel;
            targets.iter().map(relax).collect()
        };

        let mut any = false;
        let mut new_box_si = (usize::MAX, 0);
        let mut new_box_qi = (usize::MAX, 0);
        for (&node, (c, pred)) in targets.iter().zip(results) {
            if c.is_finite() {
                cost[k + 1][node] = c;
                policy[k + 1][node] = pred;
                any = true;
                let (sj, qj) = (node / n_speed, node % n_speed);
                new_box_si = (new_box_si.0.min(sj), new_box_si.1.max(sj));
                new_box_qi = (new_box_qi.0.min(qj), new_box_qi.1.max(qj));
            }
        }
        if !any {
            return Err(DpError::InfeasibleAtStage(k + 1));
        }
        box_si = new_box_si;
        box_qi = new_box_qi;
    }

    let terminal_node = match prob.terminal {
        TerminalMode::Soft => argmin_finite(&cost[n], 0..n_nodes),
        TerminalMode::HardSocTarget => {
            let sj = grid.nearest_soc(prob.soc_target);
            argmin_finite(&cost[n], (sj * n_speed)..((sj + 1) * n_speed))
        }
    };
    let Some(terminal_node) = terminal_node else {
        return Err(DpError::InfeasibleTerminal);
    };

    // traceback
    let mut nodes = vec![terminal_node; n + 1];
    for k in (1..=n).rev() {
        let pred = policy[k][nodes[k]];
        debug_assert_ne!(pred, UNREACHED);
        nodes[k - 1] = pred as usize;
    }
    let mut states = Vec::with_capacity(n + 1);
    for &node in &nodes {
        states.push((grid.soc_levels[node / n_speed], grid.speed_levels[node % n_speed]));
    }
    let mut steps = Vec::with_capacity(n);
    let mut total_fuel = 0.0;
    for k in 0..n {
        let (soc_from, speed_from) = states[k];
        let (soc_to, speed_to) = states[k + 1];
        let t = stage_cost(soc_from, soc_to, speed_from, speed_to, k, prob)
            .expect("traced transition must be feasible");
        total_fuel += t.fuel_g;
        steps.push(TrajectoryStep {
            engine_speed_rpm: speed_to,
            gen_torque_nm: t.op.gen_torque_nm,
            engine_torque_nm: t.op.engine_torque_nm,
            p_req_w: t.p_req_w,
            p_b_w: t.p_b_w,
            p_g_w: t.p_g_w,
            fuel_g: t.fuel_g,
            fuel_rate_g_s: t.op.fuel_rate_g_s,
            cost: t.cost,
        });
    }

    Ok(DpSolution {
        total_cost: cost[n][terminal_node],
        total_fuel_g: total_fuel,
        states,
        steps,
        cost_to_come: cost,
        policy,
        soc_snap,
        speed_snap,
        relaxed_terminal: false,
    })
}

fn argmin_finite(row: &[f64], range: std::ops::Range<usize>) -> Option<usize> {
    let mut best = None;
    let mut best_c = f64::INFINITY;
    for i in range {
        if row[i] < best_c {
            best_c = row[i];
            best = Some(i);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PowertrainParams;

    fn constant_problem(params: &PowertrainParams, n: usize, v_kmh: f64) -> OcpProblem<'_> {
        OcpProblem {
            v_kmh: vec![v_kmh; n],
            yaw_rad_s: vec![0.0; n],
            slope_rad: vec![0.0; n],
            soc_init: 0.7,
            soc_target: 0.7,
            speed_init_rpm: 800.0,
            w_fuel: 1.0,
            w_soc: 1000.0,
            dt_s: 1.0,
            terminal: TerminalMode::Soft,
            params,
        }
    }

    #[test]
    fn stage_cost_idle_hold() {
        // holding SOC at the target with the vehicle stopped burns idle fuel
        let params = PowertrainParams::default();
        let prob = constant_problem(&params, 3, 0.0);
        let t = stage_cost(0.7, 0.7, 800.0, 800.0, 0, &prob).unwrap();
        assert_eq!(t.p_b_w, 0.0);
        assert_eq!(t.p_g_w, 0.0);
        assert_eq!(t.op.gen_torque_nm, 0.0);
        // cost = ω₁ · idle fuel · Δt; the SOC term vanishes at the target
        assert!((t.cost - 0.15).abs() < 1e-12);
    }

    #[test]
    fn stage_cost_speed_rate_infeasible() {
        let params = PowertrainParams::default();
        let prob = constant_problem(&params, 3, 0.0);
        // 401 rpm in one second exceeds the 400 rpm/s limit
        let err = stage_cost(0.7, 0.7, 800.0, 1201.0, 0, &prob).unwrap_err();
        assert_eq!(err, Infeasible::SpeedRate);
    }

    #[test]
    fn stage_cost_battery_power_infeasible() {
        let params = PowertrainParams::default();
        let prob = constant_problem(&params, 3, 0.0);
        // an SOC drop of 2e-3 in one second needs far more than 60 kW
        let err = stage_cost(0.7, 0.698, 800.0, 800.0, 0, &prob).unwrap_err();
        assert_eq!(err, Infeasible::BatteryPower);
    }

    #[test]
    fn stage_cost_negative_genset_power_infeasible() {
        let params = PowertrainParams::default();
        let prob = constant_problem(&params, 3, 0.0);
        // discharging with zero demand would force the genset to absorb power
        let err = stage_cost(0.7, 0.6999, 800.0, 800.0, 0, &prob).unwrap_err();
        assert_eq!(err, Infeasible::NegativeGensetPower);
    }

    #[test]
    fn single_stage_total_equals_stage_cost() {
        let params = PowertrainParams::default();
        let prob = constant_problem(&params, 1, 10.0);
        let grid = SocGrid::new(0.6995, 0.7005, 10, 800.0, 1200.0, 2).unwrap();
        let sol = dp_solve(&prob, &grid).unwrap();
        let (soc0, n0) = sol.states[0];
        let (soc1, n1) = sol.states[1];
        let t = stage_cost(soc0, soc1, n0, n1, 0, &prob).unwrap();
        assert_eq!(sol.total_cost, t.cost);
        assert_eq!(sol.steps.len(), 1);
    }

    /// Exhaustive depth-first enumeration of every lattice path.
    fn brute_force(prob: &OcpProblem, grid: &SocGrid) -> Option<f64> {
        fn recurse(
            prob: &OcpProblem,
            grid: &SocGrid,
            k: usize,
            si: usize,
            qi: usize,
            acc: f64,
            best: &mut Option<f64>,
            target_si: usize,
        ) {
            if k == prob.horizon() {
                let ok = match prob.terminal {
                    TerminalMode::Soft => true,
                    TerminalMode::HardSocTarget => si == target_si,
                };
                if ok && best.map_or(true, |b| acc < b) {
                    *best = Some(acc);
                }
                return;
            }
            for sj in 0..grid.soc_levels().len() {
                for qj in 0..grid.speed_levels().len() {
                    if let Ok(t) = stage_cost(
                        grid.soc_levels()[si],
                        grid.soc_levels()[sj],
                        grid.speed_levels()[qi],
                        grid.speed_levels()[qj],
                        k,
                        prob,
                    ) {
                        recurse(prob, grid, k + 1, sj, qj, acc + t.cost, best, target_si);
                    }
                }
            }
        }
        let mut best = None;
        recurse(
            prob,
            grid,
            0,
            grid.nearest_soc(prob.soc_init),
            grid.nearest_speed(prob.speed_init_rpm),
            0.0,
            &mut best,
            grid.nearest_soc(prob.soc_target),
        );
        best
    }

    #[test]
    fn tiny_instance_matches_exhaustive_enumeration() {
        let params = PowertrainParams::default();
        let mut prob = constant_problem(&params, 5, 18.0);
        prob.v_kmh = vec![18.0, 20.0, 22.0, 20.0, 18.0];
        // speed step 400 rpm = one slew per second; soc cell 2e-4
        let grid = SocGrid::new(0.698, 0.702, 20, 800.0, 1600.0, 3).unwrap();
        let sol = dp_solve(&prob, &grid).unwrap();
        let oracle = brute_force(&prob, &grid).unwrap();
        assert!(
            (sol.total_cost - oracle).abs() < 1e-9,
            "dp {} vs oracle {}",
            sol.total_cost,
            oracle
        );
    }

    #[test]
    fn zero_velocity_soft_terminal_holds_soc_at_idle() {
        let params = PowertrainParams::default();
        let prob = constant_problem(&params, 4, 0.0);
        let grid = SocGrid::new(0.6995, 0.7005, 10, 800.0, 2400.0, 4).unwrap();
        let sol = dp_solve(&prob, &grid).unwrap();
        let oracle = brute_force(&prob, &grid).unwrap();
        assert!((sol.total_cost - oracle).abs() < 1e-9);
        for (soc, rpm) in &sol.states {
            assert!((soc - 0.7).abs() < 1e-12);
            assert_eq!(*rpm, 800.0);
        }
        // pure idling: cost is n · ω₁ · idle fuel
        assert!((sol.total_cost - 4.0 * 0.15).abs() < 1e-9);
    }

    #[test]
    fn bellman_consistency_along_traced_path() {
        let params = PowertrainParams::default();
        let mut prob = constant_problem(&params, 6, 15.0);
        prob.v_kmh = vec![15.0, 18.0, 21.0, 24.0, 21.0, 18.0];
        let grid = SocGrid::new(0.696, 0.704, 40, 800.0, 2000.0, 4).unwrap();
        let sol = dp_solve(&prob, &grid).unwrap();
        let n_speed = grid.speed_levels().len();
        for k in 0..prob.horizon() {
            let (soc_f, sp_f) = sol.states[k];
            let (soc_t, sp_t) = sol.states[k + 1];
            let si = grid.nearest_soc(soc_f);
            let qi = grid.nearest_speed(sp_f);
            let sj = grid.nearest_soc(soc_t);
            let qj = grid.nearest_speed(sp_t);
            let t = stage_cost(soc_f, soc_t, sp_f, sp_t, k, &prob).unwrap();
            let lhs = sol.cost_to_come[k + 1][sj * n_speed + qj];
            let rhs = sol.cost_to_come[k][si * n_speed + qi] + t.cost;
            assert_eq!(lhs, rhs, "stage {k}");
        }
    }

    #[test]
    fn hard_terminal_pins_final_soc() {
        let params = PowertrainParams::default();
        let mut prob = constant_problem(&params, 5, 20.0);
        prob.terminal = TerminalMode::HardSocTarget;
        prob.soc_init = 0.7001;
        let grid = SocGrid::new(0.6995, 0.7005, 20, 800.0, 2000.0, 4).unwrap();
        let sol = dp_solve(&prob, &grid).unwrap();
        let target_level = grid.soc_levels()[grid.nearest_soc(0.7)];
        assert_eq!(sol.states.last().unwrap().0, target_level);
    }

    #[test]
    fn increasing_soc_weight_tightens_soc_tracking() {
        let params = PowertrainParams::default();
        let mut prob = constant_problem(&params, 6, 20.0);
        prob.soc_init = 0.7002;
        let grid = SocGrid::new(0.6995, 0.7005, 20, 800.0, 2000.0, 4).unwrap();
        let mut prev_dev = f64::INFINITY;
        for w in [0.0, 1000.0, 100_000.0] {
            prob.w_soc = w;
            let sol = dp_solve(&prob, &grid).unwrap();
            let dev: f64 = sol.states.iter().skip(1).map(|(s, _)| (s - 0.7) * (s - 0.7)).sum();
            assert!(dev <= prev_dev + 1e-15, "w2={w}: {dev} > {prev_dev}");
            prev_dev = dev;
        }
    }

    #[test]
    fn nested_grid_refinement_never_costs_more() {
        let params = PowertrainParams::default();
        let mut prob = constant_problem(&params, 4, 20.0);
        prob.v_kmh = vec![20.0, 22.0, 22.0, 18.0];
        let coarse = SocGrid::new(0.698, 0.702, 10, 800.0, 2000.0, 4).unwrap();
        let fine = SocGrid::new(0.698, 0.702, 20, 800.0, 2000.0, 7).unwrap();
        // nesting check: every coarse level appears in the fine grid
        for &l in coarse.soc_levels() {
            assert!(fine.soc_levels().iter().any(|f| (f - l).abs() < 1e-12));
        }
        for &l in coarse.speed_levels() {
            assert!(fine.speed_levels().iter().any(|f| (f - l).abs() < 1e-9));
        }
        let c = dp_solve(&prob, &coarse).unwrap().total_cost;
        let f = dp_solve(&prob, &fine).unwrap().total_cost;
        assert!(f <= c + 1e-12, "fine {f} > coarse {c}");
    }

    #[test]
    fn infeasible_stage_is_reported() {
        let params = PowertrainParams::default();
        // demand far beyond genset plus battery at every stage
        let prob = OcpProblem {
            v_kmh: vec![80.0; 3],
            slope_rad: vec![0.4; 3],
            ..constant_problem(&params, 3, 0.0)
        };
        let grid = SocGrid::new(0.6995, 0.7005, 10, 800.0, 2400.0, 4).unwrap();
        match dp_solve(&prob, &grid) {
            Err(DpError::InfeasibleAtStage(k)) => assert_eq!(k, 1),
            other => panic!("expected stage infeasibility, got {other:?}"),
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_and_serial_agree_bitwise() {
        let params = PowertrainParams::default();
        let mut prob = constant_problem(&params, 8, 20.0);
        prob.v_kmh = vec![18.0, 20.0, 22.0, 24.0, 24.0, 22.0, 20.0, 18.0];
        let grid = SocGrid::new(0.696, 0.704, 80, 800.0, 3200.0, 7).unwrap();
        let a = dp_solve(&prob, &grid).unwrap();
        let b = dp_solve_serial(&prob, &grid).unwrap();
        assert_eq!(a.total_cost, b.total_cost);
        assert_eq!(a.states, b.states);
        assert_eq!(a.cost_to_come, b.cost_to_come);
    }
}
