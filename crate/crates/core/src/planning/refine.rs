//! Meta-action refinement into flat-output trajectories.
//!
//! The lateral flat output is a quintic in time from the current lateral
//! position, velocity and acceleration to the target lane centre with zero
//! terminal velocity and acceleration. The longitudinal output applies the
//! commanded acceleration for one step and then holds speed. Every sample is
//! checked against the actuator limits through flatness recovery.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Trajectory;
use crate::dynamics::{flat_recover, ControlInput, FlatSample, VehicleParams, VehicleState};
use crate::scenario::RoadNetwork;
use crate::simulation::{lane_change_block, target_lane, MetaAction};

/// Samples slower than this are treated as standstill and not checked.
pub const STANDSTILL_SPEED: f64 = 1e-3;
const LIMIT_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("infeasible {action:?} at sample {index}: {reason}")]
    Infeasible {
        action: MetaAction,
        index: usize,
        reason: String,
    },
    #[error("illegal {action:?}: {reason}")]
    Illegal { action: MetaAction, reason: String },
    #[error("invalid refinement settings: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineSpec {
    pub horizon: f64,
    pub dt: f64,
    /// Duration of a new lane change.
    pub maneuver_window: f64,
    /// Time allowed to settle onto the lane centre when keeping the lane.
    pub lateral_window: f64,
}

impl Default for RefineSpec {
    fn default() -> Self {
        Self {
            horizon: 3.0,
            dt: 0.1,
            maneuver_window: 3.0,
            lateral_window: 3.0,
        }
    }
}

/// `p(t) = sum c_i t^i` on `[0, T]`, continued linearly afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quintic {
    pub c: [f64; 6],
    pub duration: f64,
}

impl Quintic {
    /// Matches position, velocity and acceleration at both ends.
    pub fn fit(start: [f64; 3], end: [f64; 3], duration: f64) -> Self {
        let [p0, v0, a0] = start;
        let [p1, v1, a1] = end;
        let t = duration;
        let d = p1 - p0;
        Self {
            c: [
                p0,
                v0,
                a0 / 2.0,
                (20.0 * d - (8.0 * v1 + 12.0 * v0) * t - (3.0 * a0 - a1) * t * t) / (2.0 * t.powi(3)),
                (-30.0 * d + (14.0 * v1 + 16.0 * v0) * t + (3.0 * a0 - 2.0 * a1) * t * t) / (2.0 * t.powi(4)),
                (12.0 * d - 6.0 * (v1 + v0) * t + (a1 - a0) * t * t) / (2.0 * t.powi(5)),
            ],
            duration,
        }
    }

    /// Position and first three derivatives.
    pub fn eval(&self, t: f64) -> [f64; 4] {
        if t > self.duration {
            let [p, v, _, _] = self.eval(self.duration);
            return [p + v * (t - self.duration), v, 0.0, 0.0];
        }
        let c = &self.c;
        [
            c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5])))),
            c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * (4.0 * c[4] + t * 5.0 * c[5]))),
            2.0 * c[2] + t * (6.0 * c[3] + t * (12.0 * c[4] + t * 20.0 * c[5])),
            6.0 * c[3] + t * (24.0 * c[4] + t * 60.0 * c[5]),
        ]
    }
}

fn sample_count(spec: &RefineSpec) -> Result<usize, PlanError> {
    if !(spec.dt > 0.0 && spec.horizon >= spec.dt && spec.maneuver_window > 0.0 && spec.lateral_window > 0.0) {
        return Err(PlanError::InvalidSpec(format!("{spec:?}")));
    }
    Ok((spec.horizon / spec.dt).round() as usize)
}

/// Refines a meta-action into a trajectory. `lane` is the vehicle's assigned
/// lane before the action.
pub fn refine_to_trajectory(
    meta: MetaAction,
    state: &VehicleState,
    control: &ControlInput,
    lane: usize,
    net: &RoadNetwork,
    params: &VehicleParams,
    spec: &RefineSpec,
) -> Result<Trajectory, PlanError> {
    let window = if meta.is_lane_change() {
        if let Some(reason) = lane_change_block(net, meta, lane, state.x, control.u, false) {
            return Err(PlanError::Illegal { action: meta, reason });
        }
        spec.maneuver_window
    } else {
        spec.lateral_window
    };
    let trajectory = build(meta, state, control, lane, net, params, spec, window)?;
    check_feasible(meta, state, control, lane, net, params, spec, window)?;
    Ok(trajectory)
}

struct Profile {
    u: f64,
    a: f64,
    lateral: Quintic,
    step: f64,
}

impl Profile {
    fn new(
        meta: MetaAction,
        state: &VehicleState,
        control: &ControlInput,
        lane: usize,
        net: &RoadNetwork,
        params: &VehicleParams,
        dt: f64,
        window: f64,
    ) -> Self {
        let u = control.u;
        let commanded = match meta {
            MetaAction::Acc => params.a_max,
            MetaAction::Dec => -params.a_max,
            _ => 0.0,
        };
        let a = ((u + commanded * dt).clamp(0.0, params.u_max) - u) / dt;
        let (sin_a, cos_a) = state.alpha.sin_cos();
        let curvature = state.beta.tan() / params.wheelbase;
        let vy = u * sin_a;
        let ay = a * sin_a + u * u * curvature * cos_a;
        let target = net.lane_center(target_lane(meta, lane));
        Self {
            u,
            a,
            lateral: Quintic::fit([state.y, vy, ay], [target, 0.0, 0.0], window),
            step: dt,
        }
    }

    fn longitudinal(&self, t: f64) -> [f64; 3] {
        if t < self.step {
            [self.u * t + 0.5 * self.a * t * t, self.u + self.a * t, self.a]
        } else {
            let v1 = self.u + self.a * self.step;
            [self.u * self.step + 0.5 * self.a * self.step * self.step + v1 * (t - self.step), v1, 0.0]
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn build(
    meta: MetaAction,
    state: &VehicleState,
    control: &ControlInput,
    lane: usize,
    net: &RoadNetwork,
    params: &VehicleParams,
    spec: &RefineSpec,
    window: f64,
) -> Result<Trajectory, PlanError> {
    let n = sample_count(spec)?;
    let profile = Profile::new(meta, state, control, lane, net, params, spec.dt, window);
    let mut points = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = k as f64 * spec.dt;
        let x = if k == 0 { 0.0 } else { profile.longitudinal(t)[0] };
        let y = if k == 0 { state.y } else { profile.lateral.eval(t)[0] };
        points.push([state.x + x, y]);
    }
    Ok(Trajectory { dt: spec.dt, points })
}

#[allow(clippy::too_many_arguments)]
fn check_feasible(
    meta: MetaAction,
    state: &VehicleState,
    control: &ControlInput,
    lane: usize,
    net: &RoadNetwork,
    params: &VehicleParams,
    spec: &RefineSpec,
    window: f64,
) -> Result<(), PlanError> {
    let n = sample_count(spec)?;
    let profile = Profile::new(meta, state, control, lane, net, params, spec.dt, window);
    for k in 0..=n {
        let t = k as f64 * spec.dt;
        let [x, vx, ax] = profile.longitudinal(t);
        let [y, vy, ay, jy] = profile.lateral.eval(t);
        let sample = FlatSample {
            position: [state.x + x, y],
            d1: [vx, vy],
            d2: [ax, ay],
            d3: [0.0, jy],
        };
        check_sample(meta, k, &sample, params)?;
    }
    Ok(())
}

/// Actuator-limit check of one flat sample; standstill samples pass.
pub fn check_sample(meta: MetaAction, index: usize, sample: &FlatSample, params: &VehicleParams) -> Result<(), PlanError> {
    if sample.d1[0].hypot(sample.d1[1]) < STANDSTILL_SPEED {
        return Ok(());
    }
    let fail = |reason: String| PlanError::Infeasible {
        action: meta,
        index,
        reason,
    };
    let r = flat_recover(sample, params).map_err(|e| fail(e.to_string()))?;
    if r.u > params.u_max + LIMIT_SLACK {
        return Err(fail(format!("speed {:.3} exceeds {}", r.u, params.u_max)));
    }
    if r.beta.abs() > params.beta_max + LIMIT_SLACK {
        return Err(fail(format!("steering {:.3} exceeds {}", r.beta, params.beta_max)));
    }
    if r.omega.abs() > params.omega_max + LIMIT_SLACK {
        return Err(fail(format!("steering rate {:.3} exceeds {}", r.omega, params.omega_max)));
    }
    Ok(())
}

/// Refines `meta`, degrading to deceleration with progressively longer
/// settling windows when the request is illegal or infeasible. Returns the
/// action actually planned and the reason for any substitution.
pub fn refine_with_fallback(
    meta: MetaAction,
    state: &VehicleState,
    control: &ControlInput,
    lane: usize,
    net: &RoadNetwork,
    params: &VehicleParams,
    spec: &RefineSpec,
) -> Result<(MetaAction, Trajectory, Option<String>), PlanError> {
    let first_error = match refine_to_trajectory(meta, state, control, lane, net, params, spec) {
        Ok(t) => return Ok((meta, t, None)),
        Err(e @ PlanError::InvalidSpec(_)) => return Err(e),
        Err(e) => e.to_string(),
    };
    let base = spec.lateral_window;
    for window in [base, base.max(spec.maneuver_window) * 2.0, 10.0_f64.max(base)] {
        let relaxed = RefineSpec {
            lateral_window: window,
            ..*spec
        };
        if let Ok(t) = refine_to_trajectory(MetaAction::Dec, state, control, lane, net, params, &relaxed) {
            return Ok((MetaAction::Dec, t, Some(first_error)));
        }
    }
    let relaxed = RefineSpec {
        lateral_window: 10.0_f64.max(base),
        ..*spec
    };
    let t = build(MetaAction::Dec, state, control, lane, net, params, &relaxed, relaxed.lateral_window)?;
    Ok((
        MetaAction::Dec,
        t,
        Some(format!("{first_error}; emergency deceleration outside actuator limits")),
    ))
}

/// Checks externally supplied waypoints: spacing bounded by `u_max * dt`, no
/// backward motion, and steering recovered from finite differences within
/// `beta_max`. Differences span three steps so the 1 cm token grid does not
/// swamp the curvature. Steering rate is not checked on quantized input.
pub fn check_waypoints(meta: MetaAction, traj: &Trajectory, params: &VehicleParams) -> Result<(), PlanError> {
    let p = &traj.points;
    let dt = traj.dt;
    if p.len() < 2 {
        return Err(PlanError::Infeasible {
            action: meta,
            index: 0,
            reason: "fewer than two waypoints".into(),
        });
    }
    for i in 1..p.len() {
        let step = (p[i][0] - p[i - 1][0]).hypot(p[i][1] - p[i - 1][1]);
        if step > params.u_max * dt + 0.02 {
            return Err(PlanError::Infeasible {
                action: meta,
                index: i,
                reason: format!("waypoint spacing {step:.3} m exceeds u_max * dt"),
            });
        }
        if p[i][0] < p[i - 1][0] - 0.02 {
            return Err(PlanError::Infeasible {
                action: meta,
                index: i,
                reason: "waypoints move backwards".into(),
            });
        }
    }
    const SPAN: usize = 3;
    let h = SPAN as f64 * dt;
    for i in SPAN..p.len().saturating_sub(SPAN) {
        let (a, b, c) = (p[i - SPAN], p[i], p[i + SPAN]);
        let sample = FlatSample {
            position: b,
            d1: [(c[0] - a[0]) / (2.0 * h), (c[1] - a[1]) / (2.0 * h)],
            d2: [(c[0] - 2.0 * b[0] + a[0]) / (h * h), (c[1] - 2.0 * b[1] + a[1]) / (h * h)],
            d3: [0.0, 0.0],
        };
        if sample.d1[0].hypot(sample.d1[1]) < 1.0 {
            continue;
        }
        let r = flat_recover(&sample, params).map_err(|e| PlanError::Infeasible {
            action: meta,
            index: i,
            reason: e.to_string(),
        })?;
        if r.beta.abs() > params.beta_max {
            return Err(PlanError::Infeasible {
                action: meta,
                index: i,
                reason: format!("steering {:.3} exceeds {}", r.beta, params.beta_max),
            });
        }
    }
    Ok(())
}
