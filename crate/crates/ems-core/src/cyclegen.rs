//! Synthetic driving-cycle generation.
//!
//! Random curvature-spline paths go through the speed planner, the planned
//! profile is resampled onto the time grid, and a noisy proportional
//! tracking plant produces the actual velocity. The planned series is
//! genuinely informative of the actual future, which is exactly the signal
//! the planned-velocity predictors are built to exploit.

use crate::config::{Config, CycleGenConfig};
use crate::planner::{plan_speed, PathProfile, PlannerError, PlannerLimits, VelocityProfile};
use crate::predict::{CycleDataset, Episode};
use crate::sim::{CycleSample, DrivingCycle, SimError};
use crate::ms_to_kmh;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CycleGenError {
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// One generated episode: the time-gridded planned and actual velocity plus
/// the cycle the plant replays.
#[derive(Debug, Clone)]
pub struct GeneratedEpisode {
    pub episode: Episode,
    pub cycle: DrivingCycle,
}

/// Sample a smooth random curvature path: curvature targets every few tens
/// of metres, linearly blended, sampled at 1.5 m spacing.
fn random_path(rng: &mut ChaCha8Rng, length_m: f64) -> PathProfile {
    let ds = 1.5;
    let n = (length_m / ds).ceil() as usize + 1;
    let mut points = Vec::with_capacity(n);
    let mut kappa_from = 0.0;
    let mut kappa_to = 0.0;
    let mut seg_left = 0usize;
    let mut seg_len = 1usize;
    for i in 0..n {
        if seg_left == 0 {
            kappa_from = kappa_to;
            // half the segments run straight
            kappa_to = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(-0.35..0.35) };
            seg_len = rng.gen_range(15..45);
            seg_left = seg_len;
        }
        let blend = 1.0 - seg_left as f64 / seg_len as f64;
        points.push((i as f64 * ds, kappa_from + (kappa_to - kappa_from) * blend));
        seg_left -= 1;
    }
    PathProfile::new(points).expect("strictly increasing by construction")
}

/// Resample an arc-length profile onto the 1 s time grid by integrating
/// ds/dt = v(s). A small creep floor keeps zero-speed starts moving.
fn profile_to_time(
    path: &PathProfile,
    profile: &VelocityProfile,
    dt_s: f64,
    max_steps: usize,
) -> (Vec<f64>, Vec<f64>) {
    const CREEP_MS: f64 = 0.3;
    let s_end = path.arc_length(path.len() - 1);
    let v_at = |s: f64| -> f64 {
        // linear interpolation over the (s, v) profile
        let pts = path.points();
        let idx = pts.partition_point(|&(ps, _)| ps <= s).clamp(1, pts.len() - 1);
        let (s0, s1) = (pts[idx - 1].0, pts[idx].0);
        let (v0, v1) = (profile.v[idx - 1], profile.v[idx]);
        let t = ((s - s0) / (s1 - s0)).clamp(0.0, 1.0);
        v0 + t * (v1 - v0)
    };
    let kappa_at = |s: f64| -> f64 {
        let pts = path.points();
        let idx = pts.partition_point(|&(ps, _)| ps <= s).clamp(1, pts.len() - 1);
        let (s0, s1) = (pts[idx - 1].0, pts[idx].0);
        let (k0, k1) = (pts[idx - 1].1, pts[idx].1);
        let t = ((s - s0) / (s1 - s0)).clamp(0.0, 1.0);
        k0 + t * (k1 - k0)
    };
    let mut s = 0.0;
    let mut planned = Vec::new();
    let mut kappas = Vec::new();
    for _ in 0..max_steps {
        if s >= s_end {
            break;
        }
        let v = v_at(s);
        planned.push(v);
        kappas.push(kappa_at(s));
        s += v.max(CREEP_MS) * dt_s;
    }
    (planned, kappas)
}

/// Track the planned velocity with a proportional plant. The noise is summed
/// with the tracking correction before the acceleration clamp so the output
/// never violates the longitudinal bounds.
fn track_plant(
    planned: &[f64],
    lim: &PlannerLimits,
    gen_cfg: &CycleGenConfig,
    dt_s: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let noise = Normal::new(0.0, gen_cfg.sigma_v).expect("sigma must be finite");
    let mut actual = Vec::with_capacity(planned.len());
    let mut v = planned.first().copied().unwrap_or(0.0);
    actual.push(v);
    for k in 0..planned.len().saturating_sub(1) {
        let delta = gen_cfg.k_track * (planned[k] - v) + noise.sample(rng);
        let delta = delta.clamp(-lim.d_lon_max * dt_s, lim.a_lon_max * dt_s);
        v = (v + delta).clamp(0.0, lim.v_max);
        actual.push(v);
    }
    actual
}

fn episode_from_series(
    planned: Vec<f64>,
    actual: Vec<f64>,
    kappas: Vec<f64>,
    dt_s: f64,
) -> Result<GeneratedEpisode, CycleGenError> {
    let samples: Vec<CycleSample> = actual
        .iter()
        .enumerate()
        .map(|(k, &v)| CycleSample {
            t_s: k as f64 * dt_s,
            v_kmh: ms_to_kmh(v),
            slope_rad: 0.0,
            // skid-steer yaw rate follows the path curvature at speed
            yaw_rad_s: v * kappas[k],
        })
        .collect();
    let cycle = DrivingCycle::new(samples)?;
    let episode = Episode::new(actual, planned).expect("equal lengths by construction");
    Ok(GeneratedEpisode { episode, cycle })
}

/// Generate one episode deterministically from (seed, index).
fn generate_episode(seed: u64, index: u64, cfg: &Config) -> Result<GeneratedEpisode, CycleGenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e3779b97f4a7c15u64.wrapping_mul(index + 1)));
    let lim = PlannerLimits { v_start: 0.0, v_end: 0.0, ..cfg.planner.clone() };
    let dt = cfg.dp.dt_s;
    // route long enough to fill the episode at moderate speed
    let length_m = cfg.cyclegen.duration_s * cfg.planner.v_max * 0.7;
    let path = random_path(&mut rng, length_m);
    let profile = match plan_speed(&path, &lim) {
        Ok(p) => p,
        Err(PlannerError::NoConvergence { profile, .. }) => profile,
        Err(e) => return Err(e.into()),
    };
    let steps = (cfg.cyclegen.duration_s / dt).ceil() as usize;
    let (planned, kappas) = profile_to_time(&path, &profile, dt, steps);
    let actual = track_plant(&planned, &lim, &cfg.cyclegen, dt, &mut rng);
    episode_from_series(planned, actual, kappas, dt)
}

/// Generate the full dataset; episodes are independent and deterministic per
/// (seed, index), so the parallel and sequential paths agree exactly.
pub fn generate_cycles(seed: u64, cfg: &Config) -> Result<Vec<GeneratedEpisode>, CycleGenError> {
    let indices: Vec<u64> = (0..cfg.cyclegen.episodes as u64).collect();
    #[cfg(feature = "parallel")]
    let results: Vec<Result<GeneratedEpisode, CycleGenError>> =
        indices.par_iter().map(|&i| generate_episode(seed, i, cfg)).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<GeneratedEpisode, CycleGenError>> =
        indices.iter().map(|&i| generate_episode(seed, i, cfg)).collect();
    results.into_iter().collect()
}

/// Collect generated episodes into a training dataset.
pub fn dataset_from_episodes(episodes: &[GeneratedEpisode]) -> CycleDataset {
    CycleDataset { episodes: episodes.iter().map(|e| e.episode.clone()).collect() }
}

/// The benchmark cycle: a steady cruise, a high-demand surge, and a
/// low-demand recovery tail, produced by the same noisy tracking plant.
pub fn benchmark_cycle(seed: u64, cfg: &Config) -> Result<GeneratedEpisode, CycleGenError> {
    let dt = cfg.dp.dt_s;
    let mut planned: Vec<f64> = Vec::new();
    let mut push_ramp = |from: f64, to: f64, seconds: f64, planned: &mut Vec<f64>| {
        let steps = (seconds / dt).round() as usize;
        for i in 0..steps {
            planned.push(from + (to - from) * i as f64 / steps.max(1) as f64);
        }
    };
    push_ramp(0.0, 5.0, 10.0, &mut planned);
    push_ramp(5.0, 5.0, 90.0, &mut planned); // steady segment
    push_ramp(5.0, 9.0, 8.0, &mut planned);
    push_ramp(9.0, 9.0, 22.0, &mut planned); // high-demand segment
    push_ramp(9.0, 2.5, 8.0, &mut planned);
    push_ramp(2.5, 2.5, 22.0, &mut planned); // recovery segment
    push_ramp(2.5, 0.0, 6.0, &mut planned);
    planned.push(0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb5c0_fbcf);
    let lim = cfg.planner.clone();
    let actual = track_plant(&planned, &lim, &cfg.cyclegen, dt, &mut rng);
    let kappas = vec![0.0; planned.len()];
    episode_from_series(planned, actual, kappas, dt)
}
