//! Strategy comparison: run every configured strategy on the same cycle,
//! score by SOC-corrected equivalent fuel, and table predictor accuracy.

use crate::config::Config;
use crate::dp::SocGrid;
use crate::predict::{rollout_rmse, PredictorModel, Window};
use crate::sim::{equivalent_fuel_g, simulate, SimLog, SimRecord};
use crate::strategy::{global_dp_benchmark, MpcStrategy, PowerFollowStrategy, Strategy};
#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Strategy identifiers accepted by the harness and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    PowerFollow,
    MpcMultiStepNn,
    MpcCnnLstm,
    GlobalDp,
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::PowerFollow => "pf",
            StrategyKind::MpcMultiStepNn => "mpc-nn",
            StrategyKind::MpcCnnLstm => "mpc-cnnlstm",
            StrategyKind::GlobalDp => "dp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pf" => Some(StrategyKind::PowerFollow),
            "mpc-nn" => Some(StrategyKind::MpcMultiStepNn),
            "mpc-cnnlstm" => Some(StrategyKind::MpcCnnLstm),
            "dp" => Some(StrategyKind::GlobalDp),
            _ => None,
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One comparison row; failed rows carry the error text instead of a log.
#[derive(Debug, Clone)]
pub struct StrategyRow {
    pub name: String,
    pub raw_fuel_g: f64,
    pub equivalent_fuel_g: f64,
    pub delta_soc: f64,
    /// (baseline − this) / baseline, against the power-following row.
    pub improvement_frac: f64,
    pub fallback_steps: usize,
    pub log: Option<SimLog>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub rows: Vec<StrategyRow>,
    /// (predictor name, horizon RMSE in km/h) over the evaluation windows.
    pub rmse_rows: Vec<(String, f64)>,
}

/// Inputs to one comparison run.
pub struct CompareInputs<'a> {
    pub cycle: &'a crate::sim::DrivingCycle,
    /// Planned velocity on the cycle's time grid (m/s).
    pub planned_ms: &'a [f64],
    /// Trained predictors for the MPC rows: (row kind, model).
    pub predictors: Vec<(StrategyKind, PredictorModel)>,
    /// Held-out windows for the accuracy table: (name, model) pairs are
    /// evaluated against these.
    pub rmse_models: Vec<(String, PredictorModel)>,
    pub rmse_windows: &'a [Window],
    pub soc_init: f64,
}

fn run_row(kind: StrategyKind, model: Option<&PredictorModel>, inp: &CompareInputs, cfg: &Config) -> StrategyRow {
    let params = &cfg.powertrain;
    let soc_target = cfg.dp.soc_target;
    let name = kind.name().to_string();
    let fail = |name: &str, e: String| StrategyRow {
        name: name.to_string(),
        raw_fuel_g: f64::NAN,
        equivalent_fuel_g: f64::NAN,
        delta_soc: f64::NAN,
        improvement_frac: f64::NAN,
        fallback_steps: 0,
        log: None,
        error: Some(e),
    };
    match kind {
        StrategyKind::PowerFollow => {
            let mut s = PowerFollowStrategy::new(params, cfg.power_follow.clone(), soc_target);
            match simulate(inp.cycle, &[], &mut s, params, inp.soc_init, 0) {
                Ok(log) => row_from_log(name, log, params, soc_target, 0),
                Err(e) => fail(&name, e.to_string()),
            }
        }
        StrategyKind::MpcMultiStepNn | StrategyKind::MpcCnnLstm => {
            let model = model.expect("MPC row needs a predictor");
            let grid = match SocGrid::from_params(params, cfg.dp.soc_cells, cfg.dp.speed_levels) {
                Ok(g) => g,
                Err(e) => return fail(&name, e.to_string()),
            };
            let mut s = MpcStrategy::new(
                params,
                model.clone(),
                cfg.dp.clone(),
                grid,
                cfg.power_follow.clone(),
                kind.name(),
            );
            let plan_window = model.plan_len().max(model.horizon());
            match simulate(inp.cycle, inp.planned_ms, &mut s, params, inp.soc_init, plan_window) {
                Ok(log) => row_from_log(name, log, params, soc_target, s.fallback_count),
                Err(e) => fail(&name, e.to_string()),
            }
        }
        StrategyKind::GlobalDp => {
            let grid = match SocGrid::from_params(params, cfg.dp.soc_cells, cfg.dp.speed_levels) {
                Ok(g) => g,
                Err(e) => return fail(&name, e.to_string()),
            };
            match global_dp_benchmark(inp.cycle, params, &cfg.dp, &grid, inp.soc_init) {
                Ok(sol) => {
                    let log = dp_solution_to_log(&sol, inp.cycle);
                    row_from_log(name, log, params, soc_target, 0)
                }
                Err(e) => fail(&name, e.to_string()),
            }
        }
    }
}

fn row_from_log(
    name: String,
    log: SimLog,
    params: &crate::config::PowertrainParams,
    soc_target: f64,
    fallback_steps: usize,
) -> StrategyRow {
    StrategyRow {
        name,
        raw_fuel_g: log.total_fuel_g(),
        equivalent_fuel_g: equivalent_fuel_g(&log, params, soc_target),
        delta_soc: log.final_soc() - log.soc_init,
        improvement_frac: 0.0,
        fallback_steps,
        log: Some(log),
        error: None,
    }
}

/// Flatten a full-information solution into the common log shape so every
/// row exports the same trace CSVs.
pub fn dp_solution_to_log(sol: &crate::dp::DpSolution, cycle: &crate::sim::DrivingCycle) -> SimLog {
    let mut records = Vec::with_capacity(sol.steps.len());
    let mut fuel_cum = 0.0;
    for (k, step) in sol.steps.iter().enumerate() {
        fuel_cum += step.fuel_g;
        records.push(SimRecord {
            t_s: cycle.samples[k].t_s,
            v_kmh: cycle.samples[k].v_kmh,
            soc: sol.states[k + 1].0,
            p_req_w: step.p_req_w,
            p_b_w: step.p_b_w,
            p_g_w: step.p_g_w,
            engine_speed_rpm: step.engine_speed_rpm,
            engine_torque_nm: step.engine_torque_nm,
            gen_torque_nm: step.gen_torque_nm,
            fuel_rate_g_s: step.fuel_rate_g_s,
            fuel_cum_g: fuel_cum,
            fallback: false,
            saturated: false,
        });
    }
    SimLog { soc_init: sol.states[0].0, dt_s: cycle.dt_s, records }
}

/// Run the comparison: the power-following baseline, each configured MPC
/// row, and the full-information benchmark, plus the predictor accuracy
/// table. Rows run concurrently under the `parallel` feature; failures stay
/// per-row.
pub fn compare_strategies(inp: &CompareInputs, cfg: &Config) -> ComparisonReport {
    let mut jobs: Vec<(StrategyKind, Option<&PredictorModel>)> =
        vec![(StrategyKind::PowerFollow, None)];
    for (kind, model) in &inp.predictors {
        jobs.push((*kind, Some(model)));
    }
    jobs.push((StrategyKind::GlobalDp, None));

    #[cfg(feature = "parallel")]
    let mut rows: Vec<StrategyRow> =
        jobs.par_iter().map(|(k, m)| run_row(*k, *m, inp, cfg)).collect();
    #[cfg(not(feature = "parallel"))]
    let mut rows: Vec<StrategyRow> = jobs.iter().map(|(k, m)| run_row(*k, *m, inp, cfg)).collect();

    let baseline = rows
        .iter()
        .find(|r| r.name == StrategyKind::PowerFollow.name() && r.error.is_none())
        .map(|r| r.equivalent_fuel_g);
    if let Some(base) = baseline {
        for r in rows.iter_mut() {
            if r.error.is_none() {
                r.improvement_frac = (base - r.equivalent_fuel_g) / base;
            }
        }
    }

    let mut rmse_rows = Vec::new();
    for (name, model) in &inp.rmse_models {
        if let Ok(Some(rmse)) = rollout_rmse(model, inp.rmse_windows) {
            rmse_rows.push((name.clone(), rmse));
        }
    }

    ComparisonReport { rows, rmse_rows }
}
