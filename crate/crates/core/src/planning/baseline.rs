//! Rule-based reference policy: car following everywhere, gap acceptance on
//! the ramp and yielding to announced merges on the main road.

use serde::{Deserialize, Serialize};

use super::{refine_with_fallback, Decision, PlanContext};
use crate::communication::Message;
use crate::metrics::{ttc, SPEED_LIMIT};
use crate::simulation::{lane_change_block, HistoryBuffer, MetaAction, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Minimum acceptable bumper gap (m).
    pub gap_min: f64,
    pub desired_speed: f64,
    /// TTC below which a conflict is unsafe (s).
    pub ttc_threshold: f64,
    /// Gap and TTC still accepted when the ramp is about to end.
    pub forced_gap: f64,
    pub forced_ttc: f64,
    /// Extra distance before the last legal merge point where forced merges start (m).
    pub forced_zone: f64,
    /// Ramp vehicles do not slow below this speed while waiting for a gap.
    pub ramp_min_speed: f64,
    /// Main-road vehicles do not slow below this speed when yielding.
    pub yield_min_speed: f64,
    /// Longitudinal reach of the target-lane conflict search (m).
    pub conflict_window: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            gap_min: 15.0,
            desired_speed: 10.0,
            ttc_threshold: 5.0,
            forced_gap: 5.0,
            forced_ttc: 1.0,
            forced_zone: 20.0,
            ramp_min_speed: 5.0,
            yield_min_speed: 6.0,
            conflict_window: 40.0,
        }
    }
}

/// A hard restriction injected into the baseline, e.g. after a failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub forbid: Vec<MetaAction>,
    pub reason: String,
}

/// Order in which substitutes are tried when the preferred action is forbidden.
const PREFERENCE: [MetaAction; 5] = [
    MetaAction::Dec,
    MetaAction::Idle,
    MetaAction::Acc,
    MetaAction::Left,
    MetaAction::Right,
];

struct Rules<'a> {
    obs: &'a Observation,
    ctx: &'a PlanContext,
    trace: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
struct Other {
    dx: f64,
    gap: f64,
    speed: f64,
}

impl<'a> Rules<'a> {
    fn cfg(&self) -> &BaselineConfig {
        &self.ctx.baseline
    }

    fn in_band(&self, rel_y: f64, lane_y: f64) -> bool {
        let band = (self.ctx.net.lane_width + self.ctx.params.width) / 2.0;
        (self.obs.ego.y + rel_y - lane_y).abs() < band
    }

    fn others_in_lane(&self, lane_y: f64) -> Vec<Other> {
        let len = self.ctx.params.length;
        self.obs
            .neighbors
            .iter()
            .filter(|n| self.in_band(n.rel[1], lane_y))
            .map(|n| Other {
                dx: n.rel[0],
                gap: n.rel[0].abs() - len,
                speed: n.speed,
            })
            .collect()
    }

    /// Nearest vehicle ahead in the ego's own band or its assigned lane.
    fn lead(&self) -> Option<Other> {
        let len = self.ctx.params.length;
        let lane_y = self.ctx.net.lane_center(self.obs.lane);
        self.obs
            .neighbors
            .iter()
            .filter(|n| n.rel[0] > 0.0 && (self.in_band(n.rel[1], self.obs.ego.y) || self.in_band(n.rel[1], lane_y)))
            .map(|n| Other {
                dx: n.rel[0],
                gap: n.rel[0] - len,
                speed: n.speed,
            })
            .min_by(|a, b| a.dx.total_cmp(&b.dx))
    }

    /// `Some(Dec)` when the lead is too close or closing too fast.
    fn follow(&mut self) -> (Option<MetaAction>, bool) {
        let v = self.obs.speed;
        let Some(lead) = self.lead() else {
            return (None, true);
        };
        let gap_min = self.cfg().gap_min;
        let t = ttc(lead.gap, v, lead.speed);
        if lead.gap < 0.5 * gap_min || t < self.cfg().ttc_threshold {
            self.trace.push(format!(
                "lead {:.1} m ahead at {:.1} m/s, TTC {:.1} s: brake",
                lead.gap, lead.speed, t
            ));
            return (Some(MetaAction::Dec), false);
        }
        if lead.gap < gap_min && v > lead.speed {
            self.trace.push(format!("lead gap {:.1} m below {gap_min} m: brake", lead.gap));
            return (Some(MetaAction::Dec), false);
        }
        let acc_ok = lead.gap > 2.0 * gap_min || v + self.step_dv() <= lead.speed;
        (None, acc_ok)
    }

    fn step_dv(&self) -> f64 {
        self.ctx.params.a_max * self.ctx.dt
    }

    fn cruise(&mut self, acc_ok: bool) -> MetaAction {
        let v = self.obs.speed;
        let target = self.cfg().desired_speed;
        let dv = self.step_dv();
        if v + dv <= target && acc_ok && v + dv < SPEED_LIMIT {
            self.trace.push(format!("speed {v:.1} below desired {target:.1}: accelerate"));
            MetaAction::Acc
        } else if v - dv >= target {
            self.trace.push(format!("speed {v:.1} above desired {target:.1}: slow down"));
            MetaAction::Dec
        } else {
            self.trace.push("hold speed".into());
            MetaAction::Idle
        }
    }

    /// Gap and TTC checks against target-lane vehicles. Returns (all gaps at
    /// least `gap`, all TTCs above `ttc_min`).
    fn gap_check(&self, conflicts: &[Other], gap: f64, ttc_min: f64) -> (bool, bool) {
        let v = self.obs.speed;
        let w = self.ctx.maneuver_window;
        let len = self.ctx.params.length;
        let mut gaps_ok = true;
        let mut ttc_ok = true;
        for c in conflicts {
            let projected = c.dx + (c.speed - v) * w;
            let crosses = projected.signum() != c.dx.signum();
            if c.gap < gap || projected.abs() - len < gap || crosses {
                gaps_ok = false;
            }
            let t = if c.dx > 0.0 {
                ttc(c.gap, v, c.speed)
            } else {
                ttc(c.gap, c.speed, v)
            };
            if !(t > ttc_min) {
                ttc_ok = false;
            }
        }
        (gaps_ok, ttc_ok)
    }

    fn ramp(&mut self, acc_ok: bool, follow: Option<MetaAction>) -> MetaAction {
        let obs = self.obs;
        let net = &self.ctx.net;
        let v = obs.speed;
        let target_y = net.lane_center(obs.lane.saturating_sub(1));
        let window = self.cfg().conflict_window;
        let conflicts: Vec<Other> = self
            .others_in_lane(target_y)
            .into_iter()
            .filter(|c| c.dx.abs() <= window)
            .collect();
        let (gaps_ok, ttc_ok) = self.gap_check(&conflicts, self.cfg().gap_min, self.cfg().ttc_threshold);
        let block = lane_change_block(net, MetaAction::Left, obs.lane, obs.ego.x, v, obs.maneuver_active());
        if block.is_none() && gaps_ok && ttc_ok {
            self.trace.push(format!("{} vehicles in the target lane, gaps and TTC acceptable: merge left", conflicts.len()));
            return MetaAction::Left;
        }
        let to_end = obs.distance_to_merge;
        let last_chance = v * crate::simulation::MERGE_LEAD_TIME + crate::simulation::MERGE_MARGIN;
        if block.is_none() && to_end < last_chance + self.cfg().forced_zone {
            let (forced_gap, forced_ttc) = self.gap_check(&conflicts, self.cfg().forced_gap, self.cfg().forced_ttc);
            if forced_gap && forced_ttc {
                self.trace.push(format!("ramp ends in {to_end:.1} m, smaller gap accepted: merge left"));
                return MetaAction::Left;
            }
        }
        let len = self.ctx.params.length;
        let stop_distance = v * v / (2.0 * self.ctx.params.a_max) * 1.3 + v * self.ctx.dt;
        if to_end - len - 2.0 <= stop_distance {
            self.trace.push(format!("ramp ends in {to_end:.1} m: brake"));
            return MetaAction::Dec;
        }
        if let Some(a) = follow {
            return a;
        }
        if !(gaps_ok && ttc_ok) {
            if v - self.step_dv() >= self.cfg().ramp_min_speed {
                self.trace.push("merge gap not acceptable: slow down".into());
                return MetaAction::Dec;
            }
            self.trace.push("merge gap not acceptable, at minimum ramp speed: hold".into());
            return MetaAction::Idle;
        }
        self.cruise(acc_ok)
    }

    /// Dec when an announced merge would land within `gap_min` ahead of the ego.
    fn yield_to_messages(&mut self, messages: &[Message]) -> Option<MetaAction> {
        let obs = self.obs;
        let v = obs.speed;
        let len = self.ctx.params.length;
        let gap_min = self.cfg().gap_min;
        for m in messages {
            if !m.on_ramp || m.lane.saturating_sub(1) != obs.lane || m.sender == obs.agent {
                continue;
            }
            let dx = m.position[0] - obs.ego.x;
            let projected = dx + (m.speed - v) * m.window;
            if projected >= -len && projected - len < gap_min {
                if v - self.step_dv() < self.cfg().yield_min_speed && m.committed != MetaAction::Left {
                    continue;
                }
                self.trace.push(format!(
                    "vehicle {} announces {} and would merge {:.1} m ahead: yield",
                    m.sender, m.committed, projected - len
                ));
                return Some(MetaAction::Dec);
            }
        }
        None
    }
}

fn choose(obs: &Observation, messages: &[Message], ctx: &PlanContext) -> (MetaAction, Vec<String>) {
    let mut rules = Rules {
        obs,
        ctx,
        trace: Vec::new(),
    };
    let (follow, acc_ok) = rules.follow();
    let action = if obs.on_ramp && !obs.maneuver_active() {
        rules.ramp(acc_ok, follow)
    } else if let Some(a) = follow {
        a
    } else if let Some(a) = rules.yield_to_messages(messages) {
        a
    } else {
        rules.cruise(acc_ok)
    };
    (action, rules.trace)
}

fn finish(obs: &Observation, ctx: &PlanContext, action: MetaAction, mut trace: Vec<String>) -> Decision {
    let spec = ctx.refine_spec(obs);
    let (meta, trajectory, reason) =
        match refine_with_fallback(action, &obs.ego, &obs.control(), obs.lane, &ctx.net, &ctx.params, &spec) {
            Ok(r) => r,
            Err(e) => panic!("refinement settings rejected: {e}"),
        };
    if let Some(r) = &reason {
        trace.push(format!("{action} not executable ({r}); decelerate instead"));
    }
    trace.push(format!("decision: {meta}"));
    Decision {
        meta_action: meta,
        trajectory,
        rationale: trace.join("\n"),
        message: None,
        fallback: reason.is_some(),
        fallback_reason: reason,
    }
}

pub fn baseline_decide(
    obs: &Observation,
    messages: &[Message],
    _history: &HistoryBuffer,
    ctx: &PlanContext,
) -> Decision {
    let (action, trace) = choose(obs, messages, ctx);
    finish(obs, ctx, action, trace)
}

/// Baseline with some actions ruled out; substitutes follow a fixed
/// preference order restricted to legal actions.
pub fn baseline_decide_constrained(
    obs: &Observation,
    messages: &[Message],
    history: &HistoryBuffer,
    ctx: &PlanContext,
    constraint: &Constraint,
) -> Decision {
    let (preferred, mut trace) = choose(obs, messages, ctx);
    if !constraint.forbid.contains(&preferred) {
        trace.push(format!("constraint ({}) does not affect {preferred}", constraint.reason));
        return finish(obs, ctx, preferred, trace);
    }
    let legal = |a: MetaAction| {
        !a.is_lane_change()
            || lane_change_block(&ctx.net, a, obs.lane, obs.ego.x, obs.speed, obs.maneuver_active()).is_none()
    };
    let action = PREFERENCE
        .into_iter()
        .find(|a| !constraint.forbid.contains(a) && legal(*a))
        .unwrap_or(MetaAction::Dec);
    trace.push(format!("{preferred} ruled out ({}); use {action}", constraint.reason));
    let _ = history;
    finish(obs, ctx, action, trace)
}
