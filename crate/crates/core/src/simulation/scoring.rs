//! Per-step scores, step reward and episode aggregation.
//!
//! Replay recomputes scores through these same functions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Agent, AgentId, Event, EventKind, SimError};
use crate::dynamics::VehicleParams;
use crate::metrics::{
    self, comfort_score, driving_score, efficiency_score, path_comfort_samples, safety_score, ComfortLimits,
    ScoreWeights, SPEED_LIMIT, TTC_THRESHOLD,
};

/// Positions needed for one lagged comfort sample.
pub const COMFORT_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    pub weights: ScoreWeights,
    pub comfort: ComfortLimits,
    pub ttc_threshold: f64,
    pub speed_limit: f64,
    /// Added to the reference speed; multiples of the speed spread.
    pub sigma: f64,
    pub collision_penalty: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            weights: ScoreWeights::default(),
            comfort: ComfortLimits::default(),
            ttc_threshold: TTC_THRESHOLD,
            speed_limit: SPEED_LIMIT,
            sigma: 0.0,
            collision_penalty: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepScores {
    pub agent: AgentId,
    pub cs: f64,
    pub es: f64,
    pub ss: f64,
    /// `None` when no lead is closing in.
    pub ttc: Option<f64>,
    pub speed: f64,
    pub collided: bool,
    pub reward: f64,
}

pub fn reward(cs: f64, es: f64, ss: f64, collided: bool, cfg: &ScoreConfig) -> f64 {
    let w = &cfg.weights;
    let penalty = if collided { cfg.collision_penalty } else { 0.0 };
    w.k1 * cs + w.k2 * es + w.k3 * ss - penalty
}

pub fn discounted_return(rewards: &[f64], gamma: f64) -> Result<f64, SimError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(SimError::InvalidGamma(gamma));
    }
    let mut total = 0.0;
    let mut discount = 1.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    Ok(total)
}

/// Bumper gap and speed of the nearest vehicle ahead whose footprint overlaps
/// the ego's lateral band.
pub fn in_path_lead(ego: &Agent, others: &[Agent], params: &VehicleParams, lane_width: f64) -> Option<(f64, f64)> {
    let band = (lane_width + params.width) / 2.0;
    others
        .iter()
        .filter(|o| o.alive && o.id != ego.id)
        .filter_map(|o| {
            let dx = o.state.x - ego.state.x;
            let dy = o.state.y - ego.state.y;
            (dx > 0.0 && dy.abs() < band).then_some((dx - params.length, o.speed(), dx))
        })
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .map(|(gap, v, _)| (gap.max(0.0), v))
}

/// Scores one agent after a step. `recent` holds its latest positions in
/// chronological order, ending with the post-step position.
#[allow(clippy::too_many_arguments)]
pub fn score_step(
    cfg: &ScoreConfig,
    params: &VehicleParams,
    lane_width: f64,
    sensing_radius: f64,
    dt: f64,
    agents_next: &[Agent],
    ego: &Agent,
    recent: &[[f64; 2]],
    collided: bool,
) -> Result<StepScores, SimError> {
    let window = &recent[recent.len().saturating_sub(COMFORT_WINDOW)..];
    let cs = comfort_score(&path_comfort_samples(window, dt), &cfg.comfort);

    let nearby: Vec<f64> = agents_next
        .iter()
        .filter(|o| o.alive && o.id != ego.id)
        .filter(|o| (o.state.x - ego.state.x).hypot(o.state.y - ego.state.y) <= sensing_radius)
        .map(|o| o.speed())
        .collect();
    let v_avg = if nearby.is_empty() {
        cfg.speed_limit
    } else {
        nearby.iter().sum::<f64>() / nearby.len() as f64
    };
    // Traffic at a standstill leaves no positive reference speed; nothing is lost.
    let es = if v_avg.min(cfg.speed_limit) + cfg.sigma > 0.0 {
        efficiency_score(ego.speed(), v_avg, cfg.speed_limit, cfg.sigma).map_err(metric_err)?
    } else {
        1.0
    };

    let ttc = in_path_lead(ego, agents_next, params, lane_width)
        .map(|(gap, v_lead)| metrics::ttc(gap, ego.speed(), v_lead))
        .filter(|t| t.is_finite());
    let ss = safety_score(ttc.unwrap_or(f64::INFINITY), cfg.ttc_threshold).map_err(metric_err)?;
    Ok(StepScores {
        agent: ego.id,
        cs,
        es,
        ss,
        ttc,
        speed: ego.speed(),
        collided,
        reward: reward(cs, es, ss, collided, cfg),
    })
}

fn metric_err(e: metrics::MetricError) -> SimError {
    SimError::Invalid(e.to_string())
}

/// Scores every agent that was active before the step, in id order.
#[allow(clippy::too_many_arguments)]
pub fn score_tick(
    cfg: &ScoreConfig,
    params: &VehicleParams,
    lane_width: f64,
    sensing_radius: f64,
    dt: f64,
    active_before: &[AgentId],
    agents_next: &[Agent],
    positions: &BTreeMap<AgentId, Vec<[f64; 2]>>,
    events: &[Event],
) -> Result<Vec<StepScores>, SimError> {
    active_before
        .iter()
        .map(|id| {
            let ego = agents_next
                .iter()
                .find(|a| a.id == *id)
                .ok_or(SimError::UnknownAgent(*id))?;
            let collided = events
                .iter()
                .any(|e| e.kind == EventKind::Collision && e.agents.contains(id));
            let recent = positions.get(id).map(Vec::as_slice).unwrap_or(&[]);
            score_step(cfg, params, lane_width, sensing_radius, dt, agents_next, ego, recent, collided)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub agent: AgentId,
    pub steps: usize,
    pub cs: f64,
    pub es: f64,
    pub ss: f64,
    pub ss_min: f64,
    pub ds: f64,
    pub collisions: u32,
    pub speed_violations: u32,
    pub discounted_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub ticks: usize,
    pub cs: f64,
    pub es: f64,
    pub ss: f64,
    pub ss_min: f64,
    pub ds: f64,
    pub collisions: u32,
    pub speed_violations: u32,
    pub collision_rate: f64,
    pub min_ttc: Option<f64>,
    /// Agent-steps with a finite TTC below the threshold.
    pub low_ttc_steps: usize,
    pub agents: Vec<AgentMetrics>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn summarize(
    ticks: &[Vec<StepScores>],
    events: &[Event],
    cfg: &ScoreConfig,
    gamma: f64,
) -> Result<EpisodeMetrics, SimError> {
    let mut per_agent: BTreeMap<AgentId, Vec<StepScores>> = BTreeMap::new();
    for s in ticks.iter().flatten() {
        per_agent.entry(s.agent).or_default().push(*s);
    }
    let count = |kind: EventKind, id: AgentId| {
        events
            .iter()
            .filter(|e| e.kind == kind && e.agents.contains(&id))
            .count() as u32
    };
    let mut agents = Vec::with_capacity(per_agent.len());
    for (id, steps) in &per_agent {
        let cs = mean(&steps.iter().map(|s| s.cs).collect::<Vec<_>>());
        let es = mean(&steps.iter().map(|s| s.es).collect::<Vec<_>>());
        let ss = mean(&steps.iter().map(|s| s.ss).collect::<Vec<_>>());
        let ss_min = steps.iter().map(|s| s.ss).fold(1.0, f64::min);
        let collisions = count(EventKind::Collision, *id);
        let speed_violations = count(EventKind::SpeedViolation, *id);
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
        agents.push(AgentMetrics {
            agent: *id,
            steps: steps.len(),
            cs,
            es,
            ss,
            ss_min,
            ds: driving_score(cs, es, ss, &cfg.weights, collisions, speed_violations),
            collisions,
            speed_violations,
            discounted_return: discounted_return(&rewards, gamma)?,
        });
    }
    let collisions = events.iter().filter(|e| e.kind == EventKind::Collision).count() as u32;
    let speed_violations = events.iter().filter(|e| e.kind == EventKind::SpeedViolation).count() as u32;
    let all_ttc = ticks.iter().flatten().filter_map(|s| s.ttc);
    let min_ttc = all_ttc.clone().reduce(f64::min);
    let low_ttc_steps = all_ttc.filter(|t| *t < cfg.ttc_threshold).count();
    let field = |f: fn(&AgentMetrics) -> f64| mean(&agents.iter().map(f).collect::<Vec<_>>());
    Ok(EpisodeMetrics {
        ticks: ticks.len(),
        cs: field(|a| a.cs),
        es: field(|a| a.es),
        ss: field(|a| a.ss),
        ss_min: agents.iter().map(|a| a.ss_min).fold(1.0, f64::min),
        ds: field(|a| a.ds),
        collisions,
        speed_violations,
        collision_rate: if ticks.is_empty() {
            0.0
        } else {
            metrics::collision_rate(&[collisions], ticks.len() as f64).map_err(metric_err)?
        },
        min_ttc,
        low_ttc_steps,
        agents,
    })
}
