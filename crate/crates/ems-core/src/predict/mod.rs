//! Short-horizon velocity prediction from historical and planned velocity.
//!
//! Five interchangeable predictors: an exponential-trend extrapolation, a
//! first-order Markov chain over velocity bins, a one-step neural network
//! rolled out recursively, a convolutional-recurrent network fed the fused
//! (history, planned) sequence, and a trivial planned-velocity pass-through.
//! Every prediction is clamped to the configured velocity bounds. Training
//! is deterministic for a fixed seed.

mod cnn_lstm;
mod lbfgs;
mod mlp;

pub use cnn_lstm::CnnLstm;
pub use lbfgs::{minimize, LbfgsOptions, LbfgsReport};
pub use mlp::Mlp;

use crate::KMH_PER_MS;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("dataset has no usable episodes")]
    EmptyDataset,
    #[error("only {got} training windows, need at least {need}")]
    InsufficientData { got: usize, need: usize },
    #[error("{what}: got length {got}, want {want}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        want: usize,
    },
    #[error("non-finite loss during training (epoch {0})")]
    NonFiniteLoss(usize),
    #[error("model holds non-finite weights")]
    NonFiniteWeights,
    #[error("empty input")]
    EmptyInput,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Output clamp applied to every predicted velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityBounds {
    pub v_min: f64,
    pub v_max: f64,
}

impl VelocityBounds {
    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.v_min, self.v_max)
    }
}

impl Default for VelocityBounds {
    fn default() -> Self {
        Self { v_min: 0.0, v_max: 10.0 }
    }
}

/// One recorded drive: actual and planned velocity on a common 1 s grid (m/s).
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub actual: Vec<f64>,
    pub planned: Vec<f64>,
}

impl Episode {
    pub fn new(actual: Vec<f64>, planned: Vec<f64>) -> Result<Self, PredictError> {
        if actual.len() != planned.len() {
            return Err(PredictError::LengthMismatch {
                what: "episode planned series",
                got: planned.len(),
                want: actual.len(),
            });
        }
        Ok(Self { actual, planned })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CycleDataset {
    pub episodes: Vec<Episode>,
}

/// Predictor families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredictorKind {
    Exponential,
    Markov,
    MultiStepNn,
    CnnLstm,
    PlanFollow,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 5] = [
        PredictorKind::Exponential,
        PredictorKind::Markov,
        PredictorKind::MultiStepNn,
        PredictorKind::CnnLstm,
        PredictorKind::PlanFollow,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PredictorKind::Exponential => "exponential",
            PredictorKind::Markov => "markov",
            PredictorKind::MultiStepNn => "multistep-nn",
            PredictorKind::CnnLstm => "cnn-lstm",
            PredictorKind::PlanFollow => "plan-follow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == s)
    }
}

impl std::fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything training needs; window sizes are shared with prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    /// History window length H_h (steps).
    pub history_len: usize,
    /// Planned window length H_p (steps).
    pub plan_len: usize,
    /// Prediction horizon p (steps).
    pub horizon: usize,
    pub bounds: VelocityBounds,
    /// Markov velocity bin width (m/s).
    pub markov_bin_width: f64,
    /// Exponential-trend rate clamp θ.
    pub exp_theta: f64,
    /// Epoch cap for gradient training.
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Fraction of episodes held out for validation.
    pub val_fraction: f64,
    /// Early-stopping patience (epochs without validation improvement).
    pub patience: usize,
    /// Minimum extractable windows required for network training.
    pub min_samples: usize,
    pub lbfgs: LbfgsOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            history_len: 10,
            plan_len: 5,
            horizon: 5,
            bounds: VelocityBounds::default(),
            markov_bin_width: 0.25,
            exp_theta: 0.05,
            epochs: 200,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 32,
            val_fraction: 0.2,
            patience: 25,
            min_samples: 50,
            lbfgs: LbfgsOptions::default(),
        }
    }
}

/// CNN-LSTM architecture constants (filters × kernel, recurrent width).
const CONV_FILTERS: usize = 8;
const CONV_KERNEL: usize = 3;
const LSTM_HIDDEN: usize = 16;
const MLP_HIDDEN: usize = 10;
/// Gradient clip (global norm) for mini-batch training.
const GRAD_CLIP: f64 = 5.0;

/// A trained, frozen predictor.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictorModel {
    Exponential {
        theta: f64,
        horizon: usize,
        history_len: usize,
        bounds: VelocityBounds,
    },
    Markov {
        bin_width: f64,
        n_bins: usize,
        /// Row-stochastic transition matrix, row-major.
        transition: Vec<f64>,
        horizon: usize,
        history_len: usize,
        bounds: VelocityBounds,
    },
    MultiStepNn {
        net: Mlp,
        horizon: usize,
        bounds: VelocityBounds,
    },
    CnnLstm {
        net: CnnLstm,
        history_len: usize,
        plan_len: usize,
        bounds: VelocityBounds,
    },
    PlanFollow {
        horizon: usize,
        history_len: usize,
        plan_len: usize,
        bounds: VelocityBounds,
    },
}

impl PredictorModel {
    pub fn kind(&self) -> PredictorKind {
        match self {
            PredictorModel::Exponential { .. } => PredictorKind::Exponential,
            PredictorModel::Markov { .. } => PredictorKind::Markov,
            PredictorModel::MultiStepNn { .. } => PredictorKind::MultiStepNn,
            PredictorModel::CnnLstm { .. } => PredictorKind::CnnLstm,
            PredictorModel::PlanFollow { .. } => PredictorKind::PlanFollow,
        }
    }

    pub fn bounds(&self) -> VelocityBounds {
        match self {
            PredictorModel::Exponential { bounds, .. }
            | PredictorModel::Markov { bounds, .. }
            | PredictorModel::MultiStepNn { bounds, .. }
            | PredictorModel::CnnLstm { bounds, .. }
            | PredictorModel::PlanFollow { bounds, .. } => *bounds,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            PredictorModel::Exponential { horizon, .. }
            | PredictorModel::Markov { horizon, .. }
            | PredictorModel::MultiStepNn { horizon, .. }
            | PredictorModel::PlanFollow { horizon, .. } => *horizon,
            PredictorModel::CnnLstm { net, .. } => net.outputs,
        }
    }

    pub fn history_len(&self) -> usize {
        match self {
            PredictorModel::Exponential { history_len, .. }
            | PredictorModel::Markov { history_len, .. }
            | PredictorModel::CnnLstm { history_len, .. }
            | PredictorModel::PlanFollow { history_len, .. } => *history_len,
            PredictorModel::MultiStepNn { net, .. } => net.input_len,
        }
    }

    pub fn plan_len(&self) -> usize {
        match self {
            PredictorModel::CnnLstm { plan_len, .. } | PredictorModel::PlanFollow { plan_len, .. } => {
                *plan_len
            }
            _ => 0,
        }
    }
}

/// Inputs available at prediction time: recent measured velocity (most recent
/// last) and the planner's intent over the next steps, both in m/s.
#[derive(Debug, Clone, Copy)]
pub struct PredictionInput<'a> {
    pub history: &'a [f64],
    pub planned: &'a [f64],
}

/// Training result: the frozen model plus the validation RMSE recorded
/// during fitting (absent for models without a gradient-training loop).
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PredictorModel,
    pub val_rmse_kmh: Option<f64>,
}

/// One supervised window: `history` ends at time k, `planned` and `target`
/// both start at k+1.
#[derive(Debug, Clone)]
pub struct Window {
    pub history: Vec<f64>,
    pub planned: Vec<f64>,
    pub target: Vec<f64>,
}

/// Slide over every episode and cut aligned (history, planned, target)
/// windows.
pub fn extract_windows(
    data: &CycleDataset,
    history_len: usize,
    plan_len: usize,
    horizon: usize,
) -> Vec<Window> {
    let look_ahead = horizon.max(plan_len);
    let mut out = Vec::new();
    for ep in &data.episodes {
        let n = ep.actual.len();
        if n < history_len + look_ahead {
            continue;
        }
        for k in (history_len - 1)..(n - look_ahead) {
            out.push(Window {
                history: ep.actual[k + 1 - history_len..=k].to_vec(),
                planned: ep.planned[k + 1..k + 1 + plan_len].to_vec(),
                target: ep.actual[k + 1..k + 1 + horizon].to_vec(),
            });
        }
    }
    out
}

/// Deterministic episode-level train/validation split.
fn split_episodes(data: &CycleDataset, cfg: &TrainConfig) -> (CycleDataset, CycleDataset) {
    let n = data.episodes.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e1f);
    idx.shuffle(&mut rng);
    let n_val = if n >= 2 {
        ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let val_set: std::collections::HashSet<usize> = idx[..n_val].iter().copied().collect();
    let mut train = CycleDataset::default();
    let mut val = CycleDataset::default();
    for (i, ep) in data.episodes.iter().enumerate() {
        if val_set.contains(&i) {
            val.episodes.push(ep.clone());
        } else {
            train.episodes.push(ep.clone());
        }
    }
    (train, val)
}

/// Fit a predictor of the requested kind. Deterministic for a fixed seed.
pub fn train_predictor(
    kind: PredictorKind,
    data: &CycleDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, PredictError> {
    if data.episodes.is_empty() {
        return Err(PredictError::EmptyDataset);
    }
    if cfg.plan_len < cfg.horizon && matches!(kind, PredictorKind::PlanFollow) {
        return Err(PredictError::InvalidConfig(
            "plan-follow needs plan_len >= horizon".into(),
        ));
    }
    match kind {
        PredictorKind::Exponential => Ok(TrainOutcome {
            model: PredictorModel::Exponential {
                theta: cfg.exp_theta,
                horizon: cfg.horizon,
                history_len: cfg.history_len,
                bounds: cfg.bounds,
            },
            val_rmse_kmh: None,
        }),
        PredictorKind::PlanFollow => Ok(TrainOutcome {
            model: PredictorModel::PlanFollow {
                horizon: cfg.horizon,
                history_len: cfg.history_len,
                plan_len: cfg.plan_len,
                bounds: cfg.bounds,
            },
            val_rmse_kmh: None,
        }),
        PredictorKind::Markov => train_markov(data, cfg),
        PredictorKind::MultiStepNn => train_multistep(data, cfg),
        PredictorKind::CnnLstm => train_cnn_lstm(data, cfg),
    }
}

fn markov_bin(v: f64, bin_width: f64, n_bins: usize) -> usize {
    ((v / bin_width).floor() as isize).clamp(0, n_bins as isize - 1) as usize
}

fn train_markov(data: &CycleDataset, cfg: &TrainConfig) -> Result<TrainOutcome, PredictError> {
    let n_bins = (cfg.bounds.v_max / cfg.markov_bin_width).ceil() as usize;
    if n_bins == 0 {
        return Err(PredictError::InvalidConfig("markov bins collapse to zero".into()));
    }
    let mut counts = vec![0.0f64; n_bins * n_bins];
    for ep in &data.episodes {
        for pair in ep.actual.windows(2) {
            let from = markov_bin(pair[0], cfg.markov_bin_width, n_bins);
            let to = markov_bin(pair[1], cfg.markov_bin_width, n_bins);
            counts[from * n_bins + to] += 1.0;
        }
    }
    // visited rows become maximum-likelihood estimates; unvisited rows get
    // the add-one (uniform) fallback so the chain stays stochastic everywhere
    let mut transition = vec![0.0f64; n_bins * n_bins];
    for row in 0..n_bins {
        let total: f64 = counts[row * n_bins..(row + 1) * n_bins].iter().sum();
        if total > 0.0 {
            for col in 0..n_bins {
                transition[row * n_bins + col] = counts[row * n_bins + col] / total;
            }
        } else {
            for col in 0..n_bins {
                transition[row * n_bins + col] = 1.0 / n_bins as f64;
            }
        }
    }
    Ok(TrainOutcome {
        model: PredictorModel::Markov {
            bin_width: cfg.markov_bin_width,
            n_bins,
            transition,
            horizon: cfg.horizon,
            history_len: cfg.history_len,
            bounds: cfg.bounds,
        },
        val_rmse_kmh: None,
    })
}

fn train_multistep(data: &CycleDataset, cfg: &TrainConfig) -> Result<TrainOutcome, PredictError> {
    let (train, val) = split_episodes(data, cfg);
    let windows = extract_windows(&train, cfg.history_len, cfg.plan_len, 1);
    if windows.len() < cfg.min_samples {
        return Err(PredictError::InsufficientData {
            got: windows.len(),
            need: cfg.min_samples,
        });
    }
    let v_max = cfg.bounds.v_max;
    let inputs: Vec<Vec<f64>> = windows
        .iter()
        .map(|w| w.history.iter().map(|v| v / v_max).collect())
        .collect();
    let targets: Vec<f64> = windows.iter().map(|w| w.target[0] / v_max).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mlp = Mlp::new(cfg.history_len, MLP_HIDDEN, &mut rng);
    let mut params = mlp.params.clone();
    let shape = (cfg.history_len, MLP_HIDDEN);
    let objective = |x: &[f64]| {
        let net = Mlp::from_params(shape.0, shape.1, x.to_vec());
        net.loss_grad(&inputs, &targets)
    };
    let report = minimize(&objective, &mut params, &cfg.lbfgs);
    if !report.final_value.is_finite() {
        return Err(PredictError::NonFiniteLoss(report.iters));
    }
    let model = PredictorModel::MultiStepNn {
        net: Mlp::from_params(cfg.history_len, MLP_HIDDEN, params),
        horizon: cfg.horizon,
        bounds: cfg.bounds,
    };
    let val_rmse = validation_rmse(&model, &val, cfg)?;
    Ok(TrainOutcome { model, val_rmse_kmh: val_rmse })
}

fn train_cnn_lstm(data: &CycleDataset, cfg: &TrainConfig) -> Result<TrainOutcome, PredictError> {
    let (train, val) = split_episodes(data, cfg);
    let windows = extract_windows(&train, cfg.history_len, cfg.plan_len, cfg.horizon);
    if windows.len() < cfg.min_samples {
        return Err(PredictError::InsufficientData {
            got: windows.len(),
            need: cfg.min_samples,
        });
    }
    let val_windows = extract_windows(&val, cfg.history_len, cfg.plan_len, cfg.horizon);
    let v_max = cfg.bounds.v_max;
    let xs: Vec<Vec<f64>> = windows
        .iter()
        .map(|w| fuse_input(&w.history, &w.planned, v_max))
        .collect();
    let ys: Vec<Vec<f64>> = windows
        .iter()
        .map(|w| w.target.iter().map(|v| v / v_max).collect())
        .collect();

    let seq_len = cfg.history_len + cfg.plan_len;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = CnnLstm::new(
        seq_len,
        2,
        CONV_FILTERS,
        CONV_KERNEL,
        LSTM_HIDDEN,
        cfg.horizon,
        &mut rng,
    );

    let mut velocity = vec![0.0; net.params.len()];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut best_params = net.params.clone();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<Vec<f64>> = chunk.iter().map(|&i| ys[i].clone()).collect();
            let (loss, mut grad) = net.loss_grad(&bx, &by);
            if !loss.is_finite() {
                return Err(PredictError::NonFiniteLoss(epoch));
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > GRAD_CLIP {
                let s = GRAD_CLIP / norm;
                for g in grad.iter_mut() {
                    *g *= s;
                }
            }
            for i in 0..net.params.len() {
                velocity[i] = cfg.momentum * velocity[i] - cfg.learning_rate * grad[i];
                net.params[i] += velocity[i];
            }
        }
        // early stopping on held-out RMSE
        let candidate = PredictorModel::CnnLstm {
            net: net.clone(),
            history_len: cfg.history_len,
            plan_len: cfg.plan_len,
            bounds: cfg.bounds,
        };
        let val_rmse = rollout_rmse(&candidate, &val_windows)?;
        if let Some(v) = val_rmse {
            if v < best_val - 1e-9 {
                best_val = v;
                best_params = net.params.clone();
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > cfg.patience {
                    break;
                }
            }
        }
    }
    if best_val.is_finite() {
        net.params = best_params;
    }
    let model = PredictorModel::CnnLstm {
        net,
        history_len: cfg.history_len,
        plan_len: cfg.plan_len,
        bounds: cfg.bounds,
    };
    let val_rmse = validation_rmse(&model, &val, cfg)?;
    Ok(TrainOutcome { model, val_rmse_kmh: val_rmse })
}

fn validation_rmse(
    model: &PredictorModel,
    val: &CycleDataset,
    cfg: &TrainConfig,
) -> Result<Option<f64>, PredictError> {
    let windows = extract_windows(val, cfg.history_len, cfg.plan_len, cfg.horizon);
    rollout_rmse(model, &windows)
}

/// Horizon RMSE of a model over supervised windows, in km/h; `None` when no
/// windows are available.
pub fn rollout_rmse(model: &PredictorModel, windows: &[Window]) -> Result<Option<f64>, PredictError> {
    if windows.is_empty() {
        return Ok(None);
    }
    let mut preds = Vec::with_capacity(windows.len());
    let mut actuals = Vec::with_capacity(windows.len());
    for w in windows {
        preds.push(predict(
            model,
            &PredictionInput { history: &w.history, planned: &w.planned },
        )?);
        actuals.push(w.target.clone());
    }
    Ok(Some(rmse_kmh(&preds, &actuals)?))
}

/// Fuse normalized history and planned segments into the two-channel network
/// input; channel 1 flags the source (0 = history, 1 = planned).
fn fuse_input(history: &[f64], planned: &[f64], v_max: f64) -> Vec<f64> {
    let mut x = Vec::with_capacity(2 * (history.len() + planned.len()));
    for &v in history {
        x.push(v / v_max);
        x.push(0.0);
    }
    for &v in planned {
        x.push(v / v_max);
        x.push(1.0);
    }
    x
}

/// Predict the next `p` velocities (m/s), clamped to the model bounds.
pub fn predict(model: &PredictorModel, input: &PredictionInput) -> Result<Vec<f64>, PredictError> {
    let need_hist = model.history_len();
    if input.history.len() != need_hist {
        return Err(PredictError::LengthMismatch {
            what: "history",
            got: input.history.len(),
            want: need_hist,
        });
    }
    // kinds that never read the planned sequence accept any length there
    let need_plan = model.plan_len();
    if need_plan > 0 && input.planned.len() != need_plan {
        return Err(PredictError::LengthMismatch {
            what: "planned",
            got: input.planned.len(),
            want: need_plan,
        });
    }
    let bounds = model.bounds();
    let out = match model {
        PredictorModel::Exponential { theta, horizon, .. } => {
            let v_k = *input.history.last().ok_or(PredictError::EmptyInput)?;
            let v_prev = if input.history.len() >= 2 {
                input.history[input.history.len() - 2]
            } else {
                v_k
            };
            let rate = if v_prev.abs() < 1e-9 {
                0.0
            } else {
                (v_k / v_prev - 1.0).clamp(-theta, *theta)
            };
            (1..=*horizon)
                .map(|i| bounds.clamp(v_k * (1.0 + rate).powi(i as i32)))
                .collect()
        }
        PredictorModel::Markov {
            bin_width,
            n_bins,
            transition,
            horizon,
            ..
        } => {
            let v_k = *input.history.last().ok_or(PredictError::EmptyInput)?;
            let mut dist = vec![0.0; *n_bins];
            dist[markov_bin(v_k, *bin_width, *n_bins)] = 1.0;
            let mut out = Vec::with_capacity(*horizon);
            let mut next = vec![0.0; *n_bins];
            for _ in 0..*horizon {
                next.iter_mut().for_each(|v| *v = 0.0);
                for (from, &mass) in dist.iter().enumerate() {
                    if mass == 0.0 {
                        continue;
                    }
                    for to in 0..*n_bins {
                        next[to] += mass * transition[from * n_bins + to];
                    }
                }
                std::mem::swap(&mut dist, &mut next);
                let expected: f64 = dist
                    .iter()
                    .enumerate()
                    .map(|(b, &m)| m * (b as f64 + 0.5) * bin_width)
                    .sum();
                out.push(bounds.clamp(expected));
            }
            out
        }
        PredictorModel::MultiStepNn { net, horizon, .. } => {
            if net.params.iter().any(|p| !p.is_finite()) {
                return Err(PredictError::NonFiniteWeights);
            }
            let v_max = bounds.v_max;
            let mut window: Vec<f64> = input.history.iter().map(|v| v / v_max).collect();
            let mut out = Vec::with_capacity(*horizon);
            for _ in 0..*horizon {
                let y = net.forward(&window);
                let v = bounds.clamp(y * v_max);
                out.push(v);
                window.remove(0);
                window.push(v / v_max);
            }
            out
        }
        PredictorModel::CnnLstm { net, .. } => {
            if net.params.iter().any(|p| !p.is_finite()) {
                return Err(PredictError::NonFiniteWeights);
            }
            let x = fuse_input(input.history, input.planned, bounds.v_max);
            net.forward(&x)
                .into_iter()
                .map(|y| bounds.clamp(y * bounds.v_max))
                .collect()
        }
        PredictorModel::PlanFollow { horizon, .. } => input.planned[..*horizon]
            .iter()
            .map(|&v| bounds.clamp(v))
            .collect(),
    };
    Ok(out)
}

/// Two-level root-mean-square error: per-window RMSE over the horizon, then
/// the mean across windows, reported in km/h.
pub fn rmse_kmh(predicted: &[Vec<f64>], actual: &[Vec<f64>]) -> Result<f64, PredictError> {
    if predicted.is_empty() || predicted.len() != actual.len() {
        return Err(PredictError::EmptyInput);
    }
    let mut sum = 0.0;
    for (p, a) in predicted.iter().zip(actual) {
        if p.is_empty() || p.len() != a.len() {
            return Err(PredictError::LengthMismatch {
                what: "rmse window",
                got: p.len(),
                want: a.len(),
            });
        }
        let sq: f64 = p.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum();
        sum += (sq / p.len() as f64).sqrt();
    }
    Ok(sum / predicted.len() as f64 * KMH_PER_MS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_dataset(v: f64, len: usize, episodes: usize) -> CycleDataset {
        CycleDataset {
            episodes: (0..episodes)
                .map(|_| Episode::new(vec![v; len], vec![v; len]).unwrap())
                .collect(),
        }
    }

    #[test]
    fn exponential_constant_history_predicts_constant() {
        let cfg = TrainConfig::default();
        let model = train_predictor(PredictorKind::Exponential, &constant_dataset(5.0, 40, 1), &cfg)
            .unwrap()
            .model;
        let hist = vec![5.0; 10];
        let out = predict(&model, &PredictionInput { history: &hist, planned: &[] }).unwrap();
        assert_eq!(out, vec![5.0; 5]);
    }

    #[test]
    fn exponential_trend_is_clamped() {
        let cfg = TrainConfig::default();
        let model = train_predictor(PredictorKind::Exponential, &constant_dataset(5.0, 40, 1), &cfg)
            .unwrap()
            .model;
        // 50% jump clamps to theta = 0.05 growth
        let mut hist = vec![2.0; 10];
        hist[9] = 3.0;
        let out = predict(&model, &PredictionInput { history: &hist, planned: &[] }).unwrap();
        assert!((out[0] - 3.0 * 1.05).abs() < 1e-12);
        assert!((out[4] - 3.0 * 1.05f64.powi(5)).abs() < 1e-12);
    }

    #[test]
    fn clamping_applies_to_every_kind() {
        let mut cfg = TrainConfig::default();
        cfg.bounds = VelocityBounds { v_min: 0.0, v_max: 4.0 };
        // sawtooth rising above v_max in the data
        let data = constant_dataset(3.9, 60, 2);
        for kind in PredictorKind::ALL {
            let model = match train_predictor(kind, &data, &cfg) {
                Ok(t) => t.model,
                Err(_) => continue, // network kinds may lack samples here
            };
            let hist = vec![3.9; 10];
            let planned = vec![6.0; model.plan_len()];
            let out = predict(&model, &PredictionInput { history: &hist, planned: &planned }).unwrap();
            for v in out {
                assert!((0.0..=4.0).contains(&v), "{kind} broke the clamp: {v}");
            }
        }
    }

    #[test]
    fn markov_constant_data_self_loops() {
        let cfg = TrainConfig::default();
        let model = train_predictor(PredictorKind::Markov, &constant_dataset(5.0, 100, 2), &cfg)
            .unwrap()
            .model;
        let PredictorModel::Markov { ref transition, n_bins, bin_width, .. } = model else {
            panic!("wrong kind")
        };
        let bin = markov_bin(5.0, bin_width, n_bins);
        assert!((transition[bin * n_bins + bin] - 1.0).abs() < 1e-12);
        // rows sum to one
        for row in 0..n_bins {
            let s: f64 = transition[row * n_bins..(row + 1) * n_bins].iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "row {row} sums to {s}");
        }
        // rollout of the constant chain stays at the bin centre
        let hist = vec![5.0; 10];
        let out = predict(&model, &PredictionInput { history: &hist, planned: &[] }).unwrap();
        let center = (bin as f64 + 0.5) * bin_width;
        for v in out {
            assert!((v - center).abs() < 1e-12);
        }
    }

    #[test]
    fn markov_reproduces_deterministic_sawtooth() {
        // values on bin centres, each appearing once per period, so the
        // velocity alone determines the successor exactly
        let period: Vec<f64> = vec![1.125, 2.125, 3.125, 4.125];
        let mut actual = Vec::new();
        for _ in 0..40 {
            actual.extend_from_slice(&period);
        }
        let planned = actual.clone();
        let data = CycleDataset { episodes: vec![Episode::new(actual.clone(), planned).unwrap()] };
        let cfg = TrainConfig::default();
        let model = train_predictor(PredictorKind::Markov, &data, &cfg).unwrap().model;
        // query at a state whose successors are deterministic
        let k = 12; // actual[k] = period[0]
        let hist: Vec<f64> = actual[k - 9..=k].to_vec();
        let out = predict(&model, &PredictionInput { history: &hist, planned: &[] }).unwrap();
        for (i, v) in out.iter().enumerate() {
            assert!(
                (v - actual[k + 1 + i]).abs() < 1e-9,
                "step {i}: got {v}, want {}",
                actual[k + 1 + i]
            );
        }
    }

    #[test]
    fn multistep_learns_identity_map() {
        // v(k+1) = v(k) exactly: training RMSE must approach zero
        let mut episodes = Vec::new();
        for i in 0..8 {
            let v = 1.0 + i as f64;
            episodes.push(Episode::new(vec![v; 40], vec![v; 40]).unwrap());
        }
        let data = CycleDataset { episodes };
        let cfg = TrainConfig { min_samples: 20, ..Default::default() };
        let outcome = train_predictor(PredictorKind::MultiStepNn, &data, &cfg).unwrap();
        let PredictorModel::MultiStepNn { ref net, .. } = outcome.model else { panic!() };
        // one-step RMSE on the training relation, in m/s
        let mut worst: f64 = 0.0;
        for v in [1.0, 3.0, 5.0, 7.0] {
            let win: Vec<f64> = vec![v / cfg.bounds.v_max; 10];
            let pred = net.forward(&win) * cfg.bounds.v_max;
            worst = worst.max((pred - v).abs());
        }
        assert!(worst < 1e-2, "identity not learned: worst error {worst}");
    }

    #[test]
    fn cnn_lstm_training_is_deterministic() {
        let mut episodes = Vec::new();
        for i in 0..6 {
            let base = 2.0 + (i as f64) * 0.7;
            let actual: Vec<f64> = (0..60).map(|t| base + (t as f64 * 0.3).sin()).collect();
            let planned: Vec<f64> = (0..60).map(|t| base + ((t + 1) as f64 * 0.3).sin()).collect();
            episodes.push(Episode::new(actual, planned).unwrap());
        }
        let data = CycleDataset { episodes };
        let cfg = TrainConfig {
            epochs: 5,
            min_samples: 20,
            seed: 9,
            ..Default::default()
        };
        let a = train_predictor(PredictorKind::CnnLstm, &data, &cfg).unwrap();
        let b = train_predictor(PredictorKind::CnnLstm, &data, &cfg).unwrap();
        let (PredictorModel::CnnLstm { net: na, .. }, PredictorModel::CnnLstm { net: nb, .. }) =
            (&a.model, &b.model)
        else {
            panic!()
        };
        assert_eq!(na.params, nb.params);
    }

    #[test]
    fn rmse_examples() {
        // identical → 0
        assert_eq!(rmse_kmh(&[vec![1.0, 2.0]], &[vec![1.0, 2.0]]).unwrap(), 0.0);
        // one window, errors (1 m/s, 0) over p = 2 → 3.6/√2 km/h
        let e = rmse_kmh(&[vec![2.0, 5.0]], &[vec![1.0, 5.0]]).unwrap();
        assert!((e - 3.6 / (2.0f64).sqrt()).abs() < 1e-12);
        // two windows with per-window errors 1 and 3 (in km/h) → mean 2
        let w1 = rmse_kmh(&[vec![1.0 / 3.6]], &[vec![0.0]]).unwrap();
        assert!((w1 - 1.0).abs() < 1e-12);
        let overall = rmse_kmh(
            &[vec![1.0 / 3.6], vec![3.0 / 3.6]],
            &[vec![0.0], vec![0.0]],
        )
        .unwrap();
        assert!((overall - 2.0).abs() < 1e-12);
        // empty input rejected
        assert!(rmse_kmh(&[], &[]).is_err());
    }

    #[test]
    fn predict_rejects_mismatched_lengths() {
        let cfg = TrainConfig::default();
        let model = train_predictor(PredictorKind::Exponential, &constant_dataset(5.0, 30, 1), &cfg)
            .unwrap()
            .model;
        let hist = vec![5.0; 7]; // wrong: needs 10
        assert!(predict(&model, &PredictionInput { history: &hist, planned: &[] }).is_err());
    }

    #[test]
    fn window_extraction_alignment() {
        let actual: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let planned: Vec<f64> = (0..30).map(|i| i as f64 + 100.0).collect();
        let data = CycleDataset { episodes: vec![Episode::new(actual, planned).unwrap()] };
        let w = extract_windows(&data, 10, 5, 5);
        assert!(!w.is_empty());
        let first = &w[0];
        assert_eq!(first.history, (0..10).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(first.target, (10..15).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(first.planned, (10..15).map(|i| i as f64 + 100.0).collect::<Vec<_>>());
        // final window still fits entirely inside the episode
        let last = w.last().unwrap();
        assert_eq!(*last.target.last().unwrap(), 29.0);
    }
}
