//! Failure detection on executed decisions and the records and loss used to
//! learn from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, ControlInput, VehicleParams, VehicleState};
pub use crate::geometry::{obb_iou, GeometryError, OrientedBox};
use crate::planning::tokenizer::tokenize_trajectory;
use crate::planning::{baseline_decide_constrained, Constraint, Decision, PlanContext, Trajectory};
use crate::perception::{build_scene_description, rank_critical_objects};
use crate::scenario::{nearest_centerline_distance, AgentId, SampledCenterline};
use crate::simulation::{HistoryBuffer, MetaAction, Observation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReflectionError {
    #[error("trajectory length mismatch: predicted {predicted}, target {target}")]
    LengthMismatch { predicted: usize, target: usize },
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("cannot tokenize trajectory: {0}")]
    Tokens(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Predicted IoU above which a collision is flagged.
    pub eps_col: f64,
    /// Route deviation limit (m).
    pub eps_p: f64,
    pub eps_e: f64,
    pub eps_c: f64,
    /// Weight of the trajectory term in the reflection loss.
    pub alpha_weight: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            eps_col: 0.05,
            eps_p: 1.0,
            eps_e: 0.5,
            eps_c: 0.5,
            alpha_weight: 1.0,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), ReflectionError> {
        if !(self.eps_col > 0.0 && self.eps_col < 1.0) {
            return Err(ReflectionError::InvalidThresholds(format!("eps_col {} must lie in (0, 1)", self.eps_col)));
        }
        for (name, v) in [
            ("eps_p", self.eps_p),
            ("eps_e", self.eps_e),
            ("eps_c", self.eps_c),
            ("alpha_weight", self.alpha_weight),
        ] {
            if !(v > 0.0) {
                return Err(ReflectionError::InvalidThresholds(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureKind {
    Collision,
    RouteDeviation,
    LowEfficiency,
    LowComfort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureCase {
    pub kind: FailureKind,
    pub tick: u64,
    pub agent: AgentId,
    pub measured: f64,
    pub threshold: f64,
    /// Vehicle involved in a predicted collision.
    pub other: Option<AgentId>,
    /// Waypoint index where the value was measured, if any.
    pub waypoint: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborState {
    pub id: AgentId,
    pub state: VehicleState,
    pub control: ControlInput,
}

/// Everything the detectors look at for one agent and tick.
#[derive(Debug, Clone)]
pub struct FailureContext<'a> {
    pub tick: u64,
    pub agent: AgentId,
    pub trajectory: &'a Trajectory,
    pub ego_heading: f64,
    pub neighbors: &'a [NeighborState],
    pub centerline: &'a SampledCenterline,
    pub es: f64,
    pub cs: f64,
    pub params: &'a VehicleParams,
}

/// States under held controls; the steering angle stops at its limit.
pub fn predict_states(
    state: &VehicleState,
    control: &ControlInput,
    params: &VehicleParams,
    dt: f64,
    steps: usize,
) -> Vec<VehicleState> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut s = *state;
    out.push(s);
    for _ in 0..steps {
        let room = if control.omega >= 0.0 {
            (params.beta_max - s.beta).max(0.0)
        } else {
            (-params.beta_max - s.beta).min(0.0)
        };
        let omega = if (control.omega * dt).abs() > room.abs() {
            room / dt
        } else {
            control.omega
        };
        s = dynamics::step(&s, &ControlInput::new(control.u.max(0.0), omega), params, dt).unwrap_or(s);
        out.push(s);
    }
    out
}

/// Heading along the trajectory at each waypoint, from the displacement to
/// the next waypoint (the previous heading when standing still).
fn waypoint_headings(traj: &Trajectory, initial: f64) -> Vec<f64> {
    let p = &traj.points;
    let mut out = Vec::with_capacity(p.len());
    let mut last = initial;
    for i in 0..p.len() {
        let (a, b) = if i + 1 < p.len() { (p[i], p[i + 1]) } else if i > 0 { (p[i - 1], p[i]) } else { (p[i], p[i]) };
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        if dx.hypot(dy) > 1e-6 {
            last = dy.atan2(dx);
        }
        out.push(last);
    }
    out
}

/// Held-control forecasts over the trajectory horizon, keyed by vehicle.
pub type Forecasts = BTreeMap<AgentId, Vec<VehicleState>>;

pub fn forecast_neighbors(neighbors: &[NeighborState], params: &VehicleParams, dt: f64, steps: usize) -> Forecasts {
    neighbors
        .iter()
        .map(|n| (n.id, predict_states(&n.state, &n.control, params, dt, steps)))
        .collect()
}

pub fn detect_failures(ctx: &FailureContext<'_>, thr: &Thresholds) -> Result<Vec<FailureCase>, ReflectionError> {
    let steps = ctx.trajectory.points.len().saturating_sub(1);
    let forecasts = forecast_neighbors(ctx.neighbors, ctx.params, ctx.trajectory.dt, steps);
    detect_failures_with(ctx, &forecasts, thr)
}

/// As [`detect_failures`], with neighbour forecasts computed by the caller
/// (shared between all egos of a tick). Forecasts must cover the trajectory.
pub fn detect_failures_with(
    ctx: &FailureContext<'_>,
    forecasts: &Forecasts,
    thr: &Thresholds,
) -> Result<Vec<FailureCase>, ReflectionError> {
    let mut out = Vec::new();
    let case = |kind, measured, threshold, other, waypoint| FailureCase {
        kind,
        tick: ctx.tick,
        agent: ctx.agent,
        measured,
        threshold,
        other,
        waypoint,
    };

    let traj = ctx.trajectory;
    let steps = traj.points.len().saturating_sub(1);
    let headings = waypoint_headings(traj, ctx.ego_heading);
    let mut worst: Option<(f64, AgentId, usize)> = None;
    let reach = ctx.params.length.hypot(ctx.params.width);
    let ego_start = traj.points.first().copied().unwrap_or([0.0, 0.0]);
    let ego_travel = traj
        .points
        .iter()
        .map(|p| (p[0] - ego_start[0]).hypot(p[1] - ego_start[1]))
        .fold(0.0, f64::max);
    for n in ctx.neighbors {
        // Neither vehicle can close the distance within the horizon.
        let travel = n.control.u.abs() * traj.dt * steps as f64;
        let dist = (n.state.x - ego_start[0]).hypot(n.state.y - ego_start[1]);
        if dist > ego_travel + travel + 2.0 * reach {
            continue;
        }
        let Some(future) = forecasts.get(&n.id) else {
            continue;
        };
        for k in 1..=steps.min(future.len().saturating_sub(1)) {
            let ego = OrientedBox::at_rear_axle(traj.points[k], headings[k], ctx.params);
            let other = OrientedBox::for_vehicle(&future[k], ctx.params);
            let gap = (ego.center[0] - other.center[0]).hypot(ego.center[1] - other.center[1]);
            let iou = if gap > reach { 0.0 } else { obb_iou(&ego, &other)? };
            if worst.is_none_or(|(w, _, _)| iou > w) {
                worst = Some((iou, n.id, k));
            }
        }
    }
    if let Some((iou, id, k)) = worst {
        if iou > thr.eps_col {
            out.push(case(FailureKind::Collision, iou, thr.eps_col, Some(id), Some(k)));
        }
    }

    let deviation = traj
        .points
        .iter()
        .enumerate()
        .map(|(k, p)| (nearest_centerline_distance(*p, ctx.centerline), k))
        .fold(None, |acc: Option<(f64, usize)>, (d, k)| match acc {
            Some((best, _)) if best >= d => acc,
            _ => Some((d, k)),
        });
    if let Some((d, k)) = deviation {
        if d > thr.eps_p {
            out.push(case(FailureKind::RouteDeviation, d, thr.eps_p, None, Some(k)));
        }
    }
    if ctx.es < thr.eps_e {
        out.push(case(FailureKind::LowEfficiency, ctx.es, thr.eps_e, None, None));
    }
    if ctx.cs < thr.eps_c {
        out.push(case(FailureKind::LowComfort, ctx.cs, thr.eps_c, None, None));
    }
    Ok(out)
}

/// Mean squared Euclidean waypoint error.
pub fn trajectory_mse(predicted: &[[f64; 2]], target: &[[f64; 2]]) -> Result<f64, ReflectionError> {
    if predicted.len() != target.len() || predicted.is_empty() {
        return Err(ReflectionError::LengthMismatch {
            predicted: predicted.len(),
            target: target.len(),
        });
    }
    let sum: f64 = predicted
        .iter()
        .zip(target)
        .map(|(p, t)| (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2))
        .sum();
    Ok(sum / predicted.len() as f64)
}

/// `lm_part + alpha * MSE`; `lm_part` is the length-normalized LM loss.
pub fn reflection_loss(lm_part: f64, predicted: &[[f64; 2]], target: &[[f64; 2]], alpha_weight: f64) -> Result<f64, ReflectionError> {
    Ok(lm_part + alpha_weight * trajectory_mse(predicted, target)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionRecord {
    pub prompt: String,
    pub target_text: String,
    /// Corrected waypoints as tokens, relative to the ego at decision time.
    pub target_trajectory: String,
    pub failure_kind: FailureKind,
    pub episode: u64,
    pub tick: u64,
    pub agent: AgentId,
}

/// Trace data needed to rebuild the situation of one failure.
pub struct RecordContext<'a> {
    pub episode: u64,
    pub obs: &'a Observation,
    pub messages: &'a [crate::communication::Message],
    pub decision: &'a Decision,
    pub plan: &'a PlanContext,
}

pub fn describe_failure(f: &FailureCase) -> String {
    match f.kind {
        FailureKind::Collision => format!(
            "Collision: at waypoint {} the ego box overlaps vehicle {} with predicted IoU {:.4} (threshold {:.4}).",
            f.waypoint.unwrap_or(0),
            f.other.map_or("?".to_string(), |o| o.to_string()),
            f.measured,
            f.threshold
        ),
        FailureKind::RouteDeviation => format!(
            "Route deviation: waypoint {} lies {:.3} m from the route centerline (threshold {:.3} m).",
            f.waypoint.unwrap_or(0),
            f.measured,
            f.threshold
        ),
        FailureKind::LowEfficiency => format!(
            "Low efficiency: efficiency score {:.4} is below {:.4}.",
            f.measured, f.threshold
        ),
        FailureKind::LowComfort => format!(
            "Low comfort: comfort score {:.4} is below {:.4}.",
            f.measured, f.threshold
        ),
    }
}

fn constraint_for(f: &FailureCase, decided: MetaAction) -> Constraint {
    let forbid = match f.kind {
        FailureKind::Collision if decided == MetaAction::Dec => vec![MetaAction::Acc, MetaAction::Left, MetaAction::Right],
        FailureKind::Collision => vec![decided, MetaAction::Acc],
        FailureKind::RouteDeviation => vec![],
        FailureKind::LowEfficiency => vec![MetaAction::Dec],
        FailureKind::LowComfort if matches!(decided, MetaAction::Acc | MetaAction::Dec) => vec![decided],
        FailureKind::LowComfort => vec![],
    };
    Constraint {
        forbid,
        reason: describe_failure(f),
    }
}

fn tokens(traj: &Trajectory, origin: [f64; 2]) -> Result<String, ReflectionError> {
    tokenize_trajectory(&traj.relative_to(origin))
        .map(|t| t.to_string())
        .map_err(|e| ReflectionError::Tokens(e.to_string()))
}

pub fn emit_reflection_record(failure: &FailureCase, ctx: &RecordContext<'_>) -> Result<ReflectionRecord, ReflectionError> {
    let obs = ctx.obs;
    let origin = obs.ego.position();
    let ranked = rank_critical_objects(obs, &ctx.plan.net);
    let mut prompt = String::new();
    let _ = writeln!(prompt, "### SCENE");
    prompt.push_str(&build_scene_description(obs, &ctx.plan.net, &ranked).0);
    let _ = writeln!(prompt, "\n### MESSAGES");
    if ctx.messages.is_empty() {
        let _ = writeln!(prompt, "none");
    }
    for m in ctx.messages {
        let _ = writeln!(
            prompt,
            "from {} lane {} speed {:.2} to_merge {:.2} commits {}",
            m.sender, m.lane, m.speed, m.distance_to_merge, m.committed
        );
    }
    let _ = writeln!(prompt, "\n### DECISION");
    let _ = writeln!(prompt, "meta-action: {}", ctx.decision.meta_action);
    let _ = writeln!(prompt, "trajectory: {}", tokens(&ctx.decision.trajectory, origin)?);
    let _ = writeln!(prompt, "reasoning:");
    for line in ctx.decision.rationale.lines() {
        let _ = writeln!(prompt, "  {line}");
    }
    let _ = writeln!(prompt, "\n### FAILURE");
    let _ = writeln!(prompt, "{}", describe_failure(failure));
    let _ = writeln!(prompt, "\n### REFLECTION");
    let _ = writeln!(
        prompt,
        "Explain what went wrong, then give a corrected meta-action and trajectory in the usual answer format."
    );

    let constraint = constraint_for(failure, ctx.decision.meta_action);
    let target = baseline_decide_constrained(obs, ctx.messages, &HistoryBuffer::new(0), ctx.plan, &constraint);
    let target_trajectory = tokens(&target.trajectory, origin)?;
    let mut target_text = String::new();
    let _ = writeln!(target_text, "{}", target.meta_action);
    let _ = writeln!(target_text, "{target_trajectory}");
    let _ = writeln!(target_text, "The previous decision {} failed. {}", ctx.decision.meta_action, describe_failure(failure));
    target_text.push_str(&target.rationale);
    Ok(ReflectionRecord {
        prompt,
        target_text,
        target_trajectory,
        failure_kind: failure.kind,
        episode: ctx.episode,
        tick: failure.tick,
        agent: failure.agent,
    })
}
