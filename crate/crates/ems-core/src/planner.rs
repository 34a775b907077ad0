//! Velocity profile planning over a curvature-annotated path.
//!
//! The profile starts from the per-point speed limit, then iterates three
//! smoothing passes — lateral-acceleration cap, forward/backward
//! longitudinal-acceleration passes and a jerk pass — until it stops
//! changing. Every pass only ever lowers speeds, so the iteration contracts
//! monotonically toward a feasible fixed point.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("path arc length must be strictly increasing (violated at index {0})")]
    NonMonotonicArcLength(usize),
    #[error("non-finite path value at index {0}")]
    NonFinite(usize),
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error("no convergence after {iters} iterations (max change {residual:.2e} m/s)")]
    NoConvergence {
        iters: usize,
        residual: f64,
        /// Best profile found so far.
        profile: VelocityProfile,
    },
}

/// Arc-length-indexed path points with curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct PathProfile {
    points: Vec<(f64, f64)>,
}

impl PathProfile {
    /// Build from (arc length m, curvature 1/m) pairs; `s` must be strictly
    /// increasing.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, PlannerError> {
        for (i, &(s, k)) in points.iter().enumerate() {
            if !s.is_finite() || !k.is_finite() {
                return Err(PlannerError::NonFinite(i));
            }
            if i > 0 && s <= points[i - 1].0 {
                return Err(PlannerError::NonMonotonicArcLength(i));
            }
        }
        Ok(Self { points })
    }

    /// Derive arc length and curvature from planar waypoints. Arc length is
    /// the cumulative chord length; curvature comes from the circumscribed
    /// circle of each three consecutive points, with endpoints copying their
    /// neighbour.
    pub fn from_xy(xy: &[(f64, f64)]) -> Result<Self, PlannerError> {
        let n = xy.len();
        let mut s = vec![0.0; n];
        for i in 1..n {
            let dx = xy[i].0 - xy[i - 1].0;
            let dy = xy[i].1 - xy[i - 1].1;
            let d = (dx * dx + dy * dy).sqrt();
            if d <= 0.0 {
                return Err(PlannerError::NonMonotonicArcLength(i));
            }
            s[i] = s[i - 1] + d;
        }
        let mut kappa = vec![0.0; n];
        for i in 1..n.saturating_sub(1) {
            let (ax, ay) = (xy[i].0 - xy[i - 1].0, xy[i].1 - xy[i - 1].1);
            let (bx, by) = (xy[i + 1].0 - xy[i].0, xy[i + 1].1 - xy[i].1);
            let (cx, cy) = (xy[i + 1].0 - xy[i - 1].0, xy[i + 1].1 - xy[i - 1].1);
            let cross = ax * by - ay * bx;
            let la = (ax * ax + ay * ay).sqrt();
            let lb = (bx * bx + by * by).sqrt();
            let lc = (cx * cx + cy * cy).sqrt();
            kappa[i] = if la * lb * lc > 0.0 { 2.0 * cross.abs() / (la * lb * lc) } else { 0.0 };
        }
        if n >= 3 {
            kappa[0] = kappa[1];
            kappa[n - 1] = kappa[n - 2];
        }
        Self::new(s.into_iter().zip(kappa).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn arc_length(&self, i: usize) -> f64 {
        self.points[i].0
    }

    pub fn curvature(&self, i: usize) -> f64 {
        self.points[i].1
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}

/// Kinematic limits for the planner. All rates are positive magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerLimits {
    /// Hard speed cap (m/s).
    pub v_max: f64,
    /// Maximum lateral acceleration (m/s²).
    pub a_lat_max: f64,
    /// Maximum longitudinal acceleration (m/s²).
    pub a_lon_max: f64,
    /// Maximum longitudinal deceleration (m/s², positive magnitude).
    pub d_lon_max: f64,
    /// Maximum longitudinal jerk (m/s³).
    pub j_lon_max: f64,
    /// Upper bound on the entry speed (m/s).
    pub v_start: f64,
    /// Upper bound on the exit speed (m/s).
    pub v_end: f64,
}

impl Default for PlannerLimits {
    fn default() -> Self {
        Self {
            v_max: 10.0,
            a_lat_max: 2.0,
            a_lon_max: 1.5,
            d_lon_max: 2.5,
            j_lon_max: 2.0,
            v_start: 0.0,
            v_end: 0.0,
        }
    }
}

impl PlannerLimits {
    pub fn validate(&self) -> Result<(), PlannerError> {
        for (name, v) in [
            ("v_max", self.v_max),
            ("a_lat_max", self.a_lat_max),
            ("a_lon_max", self.a_lon_max),
            ("d_lon_max", self.d_lon_max),
            ("j_lon_max", self.j_lon_max),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PlannerError::InvalidLimits(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.v_start < 0.0 || self.v_end < 0.0 {
            return Err(PlannerError::InvalidLimits("v_start and v_end must be >= 0".into()));
        }
        Ok(())
    }
}

/// Planned speeds aligned with the path points (m/s).
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityProfile {
    pub v: Vec<f64>,
}

/// Convergence threshold on the per-point speed change (m/s).
pub const EPS_PLAN: f64 = 1e-4;
/// Iteration cap for the smoothing fixed point.
pub const MAX_ITERS: usize = 100;
/// Slack allowed when checking the constraint set post-hoc.
pub const CONSTRAINT_SLACK: f64 = 1e-9;
/// Mean segment speed floor used when converting distance to time (m/s).
const V_FLOOR: f64 = 0.1;

/// Per-point speed limit from lateral acceleration: v ≤ √(a_lat_max/|κ|),
/// capped at v_max. Zero curvature yields v_max.
pub fn curvature_cap(path: &PathProfile, lim: &PlannerLimits) -> VelocityProfile {
    let v = path
        .points()
        .iter()
        .map(|&(_, kappa)| {
            if kappa.abs() > 0.0 {
                (lim.a_lat_max / kappa.abs()).sqrt().min(lim.v_max)
            } else {
                lim.v_max
            }
        })
        .collect();
    VelocityProfile { v }
}

/// Forward/backward longitudinal passes: the forward sweep enforces the
/// acceleration bound v_i² ≤ v_{i−1}² + 2·a·Δs, the backward sweep the
/// deceleration bound v_{i−1}² ≤ v_i² + 2·d·Δs. Endpoints are clamped to
/// v_start / v_end first. Output is pointwise ≤ input.
pub fn accel_decel_passes(
    profile: &VelocityProfile,
    path: &PathProfile,
    lim: &PlannerLimits,
) -> VelocityProfile {
    let mut v = profile.v.clone();
    let n = v.len();
    if n == 0 {
        return VelocityProfile { v };
    }
    v[0] = v[0].min(lim.v_start);
    v[n - 1] = v[n - 1].min(lim.v_end);
    for i in 1..n {
        let ds = (path.arc_length(i) - path.arc_length(i - 1)).abs();
        let cap = (v[i - 1] * v[i - 1] + 2.0 * lim.a_lon_max * ds).sqrt();
        v[i] = v[i].min(cap);
    }
    for i in (1..n).rev() {
        let ds = (path.arc_length(i) - path.arc_length(i - 1)).abs();
        let cap = (v[i] * v[i] + 2.0 * lim.d_lon_max * ds).sqrt();
        v[i - 1] = v[i - 1].min(cap);
    }
    VelocityProfile { v }
}

/// Segment accelerations a_i = (v_{i+1}² − v_i²)/(2Δs_i) and traversal times
/// Δt_i = Δs_i / max(mean speed, floor) for the discrete jerk definition.
fn segment_accels_times(v: &[f64], path: &PathProfile) -> (Vec<f64>, Vec<f64>) {
    let segs = v.len().saturating_sub(1);
    let mut acc = Vec::with_capacity(segs);
    let mut dt = Vec::with_capacity(segs);
    for i in 0..segs {
        let ds = (path.arc_length(i + 1) - path.arc_length(i)).abs();
        acc.push((v[i + 1] * v[i + 1] - v[i] * v[i]) / (2.0 * ds));
        let mean = 0.5 * (v[i] + v[i + 1]);
        dt.push(ds / mean.max(V_FLOOR));
    }
    (acc, dt)
}

/// Discrete jerk at the junction of segments i and i+1:
/// j_i = (a_{i+1} − a_i)/Δt_i.
pub fn junction_jerks(v: &[f64], path: &PathProfile) -> Vec<f64> {
    let (acc, dt) = segment_accels_times(v, path);
    (0..acc.len().saturating_sub(1))
        .map(|i| (acc[i + 1] - acc[i]) / dt[i])
        .collect()
}

/// One jerk-limiting sweep over the junctions.
///
/// A positive violation (acceleration rising too fast) is relaxed by lowering
/// whichever outer neighbour is faster: the downstream speed to soften an
/// acceleration onset, or the upstream speed to shallow the tail of a
/// deceleration. A negative violation (deceleration arriving too fast) is
/// relaxed by lowering the junction speed itself, which eases both adjacent
/// segment accelerations at once. Targets sit slightly inside the bound so
/// the segment-time drift they cause cannot push a settled junction back out.
fn jerk_pass(profile: &VelocityProfile, path: &PathProfile, lim: &PlannerLimits) -> VelocityProfile {
    let mut v = profile.v.clone();
    let n = v.len();
    if n < 3 {
        return VelocityProfile { v };
    }
    let j_eff = lim.j_lon_max * (1.0 - 5e-3);
    let (mut acc, mut dt) = segment_accels_times(&v, path);
    let ds = |i: usize| (path.arc_length(i + 1) - path.arc_length(i)).abs();
    // ascending then descending, twice: deceleration-onset tapers grow
    // upstream, so a forward-only sweep would propagate them one junction
    // per call
    let order: Vec<usize> = (0..n - 2)
        .chain((0..n - 2).rev())
        .chain(0..n - 2)
        .chain((0..n - 2).rev())
        .collect();
    for i in order {
        let jerk = (acc[i + 1] - acc[i]) / dt[i];
        let changed = if jerk > lim.j_lon_max {
            // candidate reductions: downstream point (lowers a_{i+1}) or
            // upstream point (raises a_i)
            let down_sq = v[i + 1] * v[i + 1] + 2.0 * ds(i + 1) * (acc[i] + j_eff * dt[i]);
            let up_sq = v[i + 1] * v[i + 1] - 2.0 * ds(i) * (acc[i + 1] - j_eff * dt[i]);
            let mut order = [(i + 2, down_sq), (i, up_sq)];
            if v[i] > v[i + 2] {
                order.swap(0, 1);
            }
            let mut hit = None;
            for (idx, target_sq) in order {
                if target_sq >= 0.0 && target_sq < v[idx] * v[idx] {
                    v[idx] = target_sq.sqrt();
                    hit = Some(idx);
                    break;
                }
            }
            // both targets collapse: floor the faster neighbour at zero
            if hit.is_none() {
                let idx = if v[i] > v[i + 2] { i } else { i + 2 };
                if v[idx] > 0.0 && order.iter().all(|&(_, t)| t < 0.0) {
                    v[idx] = 0.0;
                    hit = Some(idx);
                }
            }
            hit
        } else if jerk < -lim.j_lon_max {
            let num = v[i + 2] * v[i + 2] / (2.0 * ds(i + 1))
                + v[i] * v[i] / (2.0 * ds(i))
                + j_eff * dt[i];
            let den = 0.5 / ds(i + 1) + 0.5 / ds(i);
            let target_sq = num / den;
            if target_sq < v[i + 1] * v[i + 1] {
                v[i + 1] = target_sq.max(0.0).sqrt();
                Some(i + 1)
            } else {
                None
            }
        } else {
            None
        };
        if let Some(idx) = changed {
            // refresh the two segments touching the modified point
            for s in idx.saturating_sub(1)..=idx {
                if s < acc.len() {
                    let d = ds(s);
                    acc[s] = (v[s + 1] * v[s + 1] - v[s] * v[s]) / (2.0 * d);
                    dt[s] = d / (0.5 * (v[s] + v[s + 1])).max(V_FLOOR);
                }
            }
        }
    }
    VelocityProfile { v }
}

/// True when the profile satisfies the lateral cap, both longitudinal bounds
/// and the discrete jerk bound, each with [`CONSTRAINT_SLACK`].
pub fn satisfies_constraints(v: &[f64], path: &PathProfile, lim: &PlannerLimits) -> bool {
    let n = v.len();
    for i in 0..n {
        let kappa = path.curvature(i).abs();
        let cap = if kappa > 0.0 { (lim.a_lat_max / kappa).sqrt().min(lim.v_max) } else { lim.v_max };
        if v[i] > cap + CONSTRAINT_SLACK {
            return false;
        }
    }
    for i in 1..n {
        let ds = (path.arc_length(i) - path.arc_length(i - 1)).abs();
        let fwd = (v[i] * v[i] - v[i - 1] * v[i - 1]) / (2.0 * ds);
        if fwd > lim.a_lon_max + CONSTRAINT_SLACK || -fwd > lim.d_lon_max + CONSTRAINT_SLACK {
            return false;
        }
    }
    junction_jerks(v, path)
        .iter()
        .all(|j| j.abs() <= lim.j_lon_max + CONSTRAINT_SLACK)
}

/// Plan a velocity profile satisfying all constraints, by fixed-point
/// iteration of the three smoothing passes. Fails with the last profile
/// attached if the iteration cap is reached first.
pub fn plan_speed(path: &PathProfile, lim: &PlannerLimits) -> Result<VelocityProfile, PlannerError> {
    lim.validate()?;
    if path.len() <= 1 {
        let v = curvature_cap(path, lim)
            .v
            .iter()
            .map(|&c| c.min(lim.v_start))
            .collect();
        return Ok(VelocityProfile { v });
    }
    let mut profile = curvature_cap(path, lim);
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let before = profile.v.clone();
        profile = accel_decel_passes(&profile, path, lim);
        profile = jerk_pass(&profile, path, lim);
        residual = before
            .iter()
            .zip(&profile.v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual < EPS_PLAN && satisfies_constraints(&profile.v, path, lim) {
            return Ok(profile);
        }
    }
    if satisfies_constraints(&profile.v, path, lim) {
        return Ok(profile);
    }
    Err(PlannerError::NoConvergence {
        iters: MAX_ITERS,
        residual,
        profile,
    })
}
