//! Multi-agent environment: joint state, partial observations, synchronous
//! execution of decisions and terminal events.

pub mod scoring;

use std::collections::{BTreeMap, VecDeque};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, ControlInput, DynamicsError, FlatSample, VehicleParams, VehicleState};
use crate::geometry::{intersection_area, OrientedBox};
use crate::metrics::SPEED_LIMIT;
use crate::planning::{Decision, Trajectory};
use crate::rng;
pub use crate::scenario::AgentId;
use crate::scenario::{classify_merge_condition, LaneTransition, MergeCondition, RoadNetwork, Route, Spawn};

pub use scoring::{discounted_return, reward, ScoreConfig, StepScores};

/// Ramp-to-main changes need at least `speed * MERGE_LEAD_TIME + MERGE_MARGIN`
/// metres before the ramp ends so the rear axle clears the ramp lane in time.
pub const MERGE_LEAD_TIME: f64 = 1.5;
pub const MERGE_MARGIN: f64 = 5.0;
/// Lateral offset under which a merged vehicle counts as settled (m).
pub const SETTLED_OFFSET: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("agent {0} is no longer active")]
    InactiveAgent(AgentId),
    #[error("missing decision for agent {0}")]
    MissingDecision(AgentId),
    #[error("agent {agent}: trajectory dt {traj_dt} does not match simulation dt {sim_dt}")]
    TimeBase { agent: AgentId, traj_dt: f64, sim_dt: f64 },
    #[error("agent {agent}: trajectory needs at least two waypoints, got {len}")]
    ShortTrajectory { agent: AgentId, len: usize },
    #[error("agent {agent}: trajectory starts {offset:.6} m away from the current pose")]
    StartMismatch { agent: AgentId, offset: f64 },
    #[error("agent {agent}: illegal {action:?}: {reason}")]
    IllegalAction { agent: AgentId, action: MetaAction, reason: String },
    #[error("agent {agent}: {source}")]
    Dynamics { agent: AgentId, source: DynamicsError },
    #[error("discount factor must lie in [0, 1], got {0}")]
    InvalidGamma(f64),
    #[error("invalid simulation setting: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetaAction {
    Left,
    Right,
    Idle,
    Acc,
    Dec,
}

impl MetaAction {
    pub const ALL: [MetaAction; 5] = [
        MetaAction::Left,
        MetaAction::Right,
        MetaAction::Idle,
        MetaAction::Acc,
        MetaAction::Dec,
    ];

    pub fn token(self) -> &'static str {
        match self {
            MetaAction::Left => "LEFT",
            MetaAction::Right => "RIGHT",
            MetaAction::Idle => "IDLE",
            MetaAction::Acc => "ACC",
            MetaAction::Dec => "DEC",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.token() == s)
    }

    pub fn is_lane_change(self) -> bool {
        matches!(self, MetaAction::Left | MetaAction::Right)
    }
}

impl std::fmt::Display for MetaAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// A lane change in progress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Maneuver {
    pub from_lane: usize,
    pub to_lane: usize,
    pub start_tick: u64,
    pub deadline_tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    MergeCompleted,
    Collision,
    OffRoad,
    HorizonEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: AgentId,
    pub state: VehicleState,
    pub control: ControlInput,
    /// Assigned lane: switches to the target lane as soon as a change starts.
    pub lane: usize,
    pub route: Route,
    pub maneuver: Option<Maneuver>,
    pub alive: bool,
    pub merged: bool,
    pub speeding: bool,
}

impl Agent {
    pub fn speed(&self) -> f64 {
        self.control.u
    }
}

/// The environment part of the joint state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvDescriptor {
    pub network_id: String,
    pub merge_condition: MergeCondition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub dt: f64,
    pub sensing_radius: f64,
    /// Standard deviation of the additive position noise on neighbours (m).
    pub noise_sigma: f64,
    /// Duration of a lane change (s).
    pub maneuver_window: f64,
    pub seed: u64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            dt: 0.1,
            sensing_radius: 100.0,
            noise_sigma: 0.0,
            maneuver_window: 3.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub tick: u64,
    pub net: RoadNetwork,
    pub params: VehicleParams,
    pub settings: SimSettings,
    pub env: EnvDescriptor,
    /// Sorted by id.
    pub agents: Vec<Agent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    Collision,
    OffRoad,
    MergeCompleted,
    SpeedViolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    /// Tick whose decisions produced the event.
    pub tick: u64,
    /// Ascending ids; two for a collision, one otherwise.
    pub agents: Vec<AgentId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: AgentId,
    /// Position relative to the ego rear axle, world axes.
    pub rel: [f64; 2],
    pub speed: f64,
    pub heading: f64,
    /// Lane containing the neighbour's rear axle, if any.
    pub lane: Option<usize>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub agent: AgentId,
    pub tick: u64,
    pub time: f64,
    pub ego: VehicleState,
    pub speed: f64,
    pub lane: usize,
    pub lane_count: usize,
    pub main_lanes: usize,
    /// Signed distance from the rear axle to the merge point (m).
    pub distance_to_merge: f64,
    pub on_ramp: bool,
    pub merged: bool,
    /// Seconds left in the current lane change, if any.
    pub maneuver_remaining: Option<f64>,
    /// Sorted by distance, then id.
    pub neighbors: Vec<Neighbor>,
}

impl Observation {
    pub fn control(&self) -> ControlInput {
        ControlInput::new(self.speed, 0.0)
    }

    pub fn maneuver_active(&self) -> bool {
        self.maneuver_remaining.is_some()
    }
}

/// Bounded chronological (observation, action) history of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryBuffer {
    pub cap: usize,
    pub entries: VecDeque<(Observation, MetaAction)>,
}

impl HistoryBuffer {
    pub fn new(cap: usize) -> Self {
        Self {
            cap,
            entries: VecDeque::with_capacity(cap),
        }
    }

    pub fn push(&mut self, obs: Observation, action: MetaAction) {
        if self.cap == 0 {
            return;
        }
        while self.entries.len() >= self.cap {
            self.entries.pop_front();
        }
        self.entries.push_back((obs, action));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_action(&self) -> Option<MetaAction> {
        self.entries.back().map(|(_, a)| *a)
    }
}

/// Why a lane change is not allowed, if it is not.
pub fn lane_change_block(
    net: &RoadNetwork,
    action: MetaAction,
    lane: usize,
    x: f64,
    speed: f64,
    maneuver_active: bool,
) -> Option<String> {
    let target = match action {
        MetaAction::Left if lane > 0 => lane - 1,
        MetaAction::Left => return Some("no lane to the left".into()),
        MetaAction::Right if lane + 1 < net.lane_count() => lane + 1,
        MetaAction::Right => return Some("no lane to the right".into()),
        _ => return None,
    };
    if maneuver_active {
        return Some("a lane change is already in progress".into());
    }
    if !net.is_ramp_lane(lane) && net.is_ramp_lane(target) {
        return Some("main-road vehicles may not enter the ramp".into());
    }
    let clearance = speed * MERGE_LEAD_TIME + MERGE_MARGIN;
    if x + clearance > net.lane_end(target) {
        return Some(format!("target lane {target} ends too soon"));
    }
    if net.is_ramp_lane(lane) && !net.is_ramp_lane(target) {
        if x < net.merge_zone_start {
            return Some("not yet in the merge zone".into());
        }
        if x + clearance > net.merge_point_s {
            return Some("too close to the end of the ramp".into());
        }
    }
    None
}

pub fn target_lane(action: MetaAction, lane: usize) -> usize {
    match action {
        MetaAction::Left => lane.saturating_sub(1),
        MetaAction::Right => lane + 1,
        _ => lane,
    }
}

impl SimState {
    pub fn new(
        net: RoadNetwork,
        params: VehicleParams,
        settings: SimSettings,
        spawns: &[Spawn],
    ) -> Result<Self, SimError> {
        params
            .validate()
            .map_err(|e| SimError::Invalid(e.to_string()))?;
        if !(settings.dt > 0.0) || !(settings.sensing_radius > 0.0) || !(settings.noise_sigma >= 0.0) {
            return Err(SimError::Invalid(
                "dt and sensing_radius must be positive, noise_sigma non-negative".into(),
            ));
        }
        if !(settings.maneuver_window >= settings.dt) {
            return Err(SimError::Invalid("maneuver_window must be at least one step".into()));
        }
        let env = EnvDescriptor {
            network_id: format!(
                "straight-{}m{}r{}p",
                net.main_lanes, net.ramp_lanes, net.post_merge_lanes
            ),
            merge_condition: classify_merge_condition(&net),
        };
        let mut agents: Vec<Agent> = spawns
            .iter()
            .map(|s| Agent {
                id: s.id,
                state: VehicleState::new(s.station, net.lane_center(s.lane), 0.0, 0.0),
                control: ControlInput::new(s.speed, 0.0),
                lane: s.lane,
                route: Route::for_spawn(s.lane, &net),
                maneuver: None,
                alive: true,
                merged: false,
                speeding: s.speed > SPEED_LIMIT,
            })
            .collect();
        agents.sort_by_key(|a| a.id);
        if agents.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(SimError::Invalid("duplicate agent id".into()));
        }
        Ok(Self {
            tick: 0,
            net,
            params,
            settings,
            env,
            agents,
        })
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.settings.dt
    }

    pub fn agent(&self, id: AgentId) -> Result<&Agent, SimError> {
        self.agents
            .binary_search_by_key(&id, |a| a.id)
            .map(|i| &self.agents[i])
            .map_err(|_| SimError::UnknownAgent(id))
    }

    pub fn alive_ids(&self) -> Vec<AgentId> {
        self.agents.iter().filter(|a| a.alive).map(|a| a.id).collect()
    }

    pub fn observe(&self, id: AgentId) -> Result<Observation, SimError> {
        let ego = self.agent(id)?;
        if !ego.alive {
            return Err(SimError::InactiveAgent(id));
        }
        let sigma = self.settings.noise_sigma;
        let mut noise = if sigma > 0.0 {
            Some((
                rng::substream(self.settings.seed, rng::NOISE_STREAM, &[self.tick, id.0 as u64]),
                Normal::new(0.0, sigma).map_err(|e| SimError::Invalid(e.to_string()))?,
            ))
        } else {
            None
        };
        let mut neighbors = Vec::new();
        for other in &self.agents {
            if other.id == id || !other.alive {
                continue;
            }
            let mut pos = other.state.position();
            if let Some((rng, normal)) = noise.as_mut() {
                pos[0] += normal.sample(rng);
                pos[1] += normal.sample(rng);
            }
            let rel = [pos[0] - ego.state.x, pos[1] - ego.state.y];
            let distance = rel[0].hypot(rel[1]);
            if distance > self.settings.sensing_radius {
                continue;
            }
            neighbors.push(Neighbor {
                id: other.id,
                rel,
                speed: other.speed(),
                heading: other.state.alpha,
                lane: self.net.lane_at(pos[0], pos[1]),
                distance,
            });
        }
        neighbors.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
        Ok(Observation {
            agent: id,
            tick: self.tick,
            time: self.time(),
            ego: ego.state,
            speed: ego.speed(),
            lane: ego.lane,
            lane_count: self.net.lane_count(),
            main_lanes: self.net.main_lanes,
            distance_to_merge: self.net.merge_point_s - ego.state.x,
            on_ramp: ego.route.is_ramp_route(&self.net) && !ego.merged,
            merged: ego.merged,
            maneuver_remaining: ego.maneuver.map(|m| {
                m.deadline_tick.saturating_sub(self.tick) as f64 * self.settings.dt
            }),
            neighbors,
        })
    }

    /// Executes one decision per active agent and returns the next state with
    /// the events raised during the step.
    pub fn advance(
        &self,
        decisions: &BTreeMap<AgentId, Decision>,
    ) -> Result<(SimState, Vec<Event>), SimError> {
        let dt = self.settings.dt;
        let mut next = self.clone();
        next.tick += 1;
        let mut events = Vec::new();
        for agent in next.agents.iter_mut().filter(|a| a.alive) {
            let decision = decisions
                .get(&agent.id)
                .ok_or(SimError::MissingDecision(agent.id))?;
            check_trajectory(agent, &decision.trajectory, dt)?;
            let action = decision.meta_action;
            if action.is_lane_change() {
                if let Some(reason) = lane_change_block(
                    &self.net,
                    action,
                    agent.lane,
                    agent.state.x,
                    agent.speed(),
                    agent.maneuver.is_some(),
                ) {
                    return Err(SimError::IllegalAction {
                        agent: agent.id,
                        action,
                        reason,
                    });
                }
                let to = target_lane(action, agent.lane);
                let window_ticks = (self.settings.maneuver_window / dt).round() as u64;
                let pts = &decision.trajectory.points;
                let end_x = pts[(window_ticks as usize).min(pts.len() - 1)][0];
                agent.route.push_transition(LaneTransition {
                    s_start: agent.state.x,
                    s_end: end_x.max(agent.state.x + 1e-3),
                    from_lane: agent.lane,
                    to_lane: to,
                });
                agent.maneuver = Some(Maneuver {
                    from_lane: agent.lane,
                    to_lane: to,
                    start_tick: self.tick,
                    deadline_tick: self.tick + window_ticks,
                });
                agent.lane = to;
            }
            let control = track(&agent.state, &decision.trajectory, &self.params, dt);
            agent.state = dynamics::step(&agent.state, &control, &self.params, dt).map_err(|source| {
                SimError::Dynamics {
                    agent: agent.id,
                    source,
                }
            })?;
            agent.control = control;
            if agent.maneuver.is_some_and(|m| next.tick >= m.deadline_tick) {
                agent.maneuver = None;
            }
        }

        for agent in next.agents.iter_mut().filter(|a| a.alive) {
            let speeding = agent.speed() > SPEED_LIMIT;
            if speeding && !agent.speeding {
                events.push(Event {
                    kind: EventKind::SpeedViolation,
                    tick: self.tick,
                    agents: vec![agent.id],
                });
            }
            agent.speeding = speeding;
            let on_road = self.net.lane_at(agent.state.x, agent.state.y).is_some();
            if !on_road {
                events.push(Event {
                    kind: EventKind::OffRoad,
                    tick: self.tick,
                    agents: vec![agent.id],
                });
            }
        }

        let alive: Vec<usize> = (0..next.agents.len()).filter(|&i| next.agents[i].alive).collect();
        let boxes: Vec<OrientedBox> = alive
            .iter()
            .map(|&i| OrientedBox::for_vehicle(&next.agents[i].state, &self.params))
            .collect();
        let reach = self.params.length + self.params.width;
        let mut collided = vec![false; next.agents.len()];
        for a in 0..alive.len() {
            for b in a + 1..alive.len() {
                let (pa, pb) = (boxes[a].center, boxes[b].center);
                if (pa[0] - pb[0]).hypot(pa[1] - pb[1]) > reach {
                    continue;
                }
                let area = intersection_area(&boxes[a], &boxes[b]).map_err(|e| SimError::Invalid(e.to_string()))?;
                if area > 0.0 {
                    events.push(Event {
                        kind: EventKind::Collision,
                        tick: self.tick,
                        agents: vec![next.agents[alive[a]].id, next.agents[alive[b]].id],
                    });
                    collided[alive[a]] = true;
                    collided[alive[b]] = true;
                }
            }
        }
        let off_road: Vec<AgentId> = events
            .iter()
            .filter(|e| e.kind == EventKind::OffRoad)
            .flat_map(|e| e.agents.clone())
            .collect();
        for (i, agent) in next.agents.iter_mut().enumerate() {
            if collided[i] || off_road.contains(&agent.id) {
                agent.alive = false;
            }
        }

        for agent in next.agents.iter_mut().filter(|a| a.alive && !a.merged) {
            if merge_settled(agent, &self.net) {
                agent.merged = true;
                events.push(Event {
                    kind: EventKind::MergeCompleted,
                    tick: self.tick,
                    agents: vec![agent.id],
                });
            }
        }
        events.sort_by(|a, b| a.kind.cmp(&b.kind).then(a.agents.cmp(&b.agents)));
        Ok((next, events))
    }
}

fn merge_settled(agent: &Agent, net: &RoadNetwork) -> bool {
    if !agent.route.is_ramp_route(net) || agent.maneuver.is_some() {
        return false;
    }
    let changed = !agent.route.transitions.is_empty();
    agent.lane == agent.route.final_lane()
        && (changed || agent.state.x >= net.merge_point_s)
        && (agent.state.y - net.lane_center(agent.lane)).abs() < SETTLED_OFFSET
}

fn check_trajectory(agent: &Agent, traj: &Trajectory, dt: f64) -> Result<(), SimError> {
    if (traj.dt - dt).abs() > 1e-9 {
        return Err(SimError::TimeBase {
            agent: agent.id,
            traj_dt: traj.dt,
            sim_dt: dt,
        });
    }
    if traj.points.len() < 2 {
        return Err(SimError::ShortTrajectory {
            agent: agent.id,
            len: traj.points.len(),
        });
    }
    let p0 = traj.points[0];
    let offset = (p0[0] - agent.state.x).hypot(p0[1] - agent.state.y);
    if !(offset <= 1e-6) {
        return Err(SimError::StartMismatch {
            agent: agent.id,
            offset,
        });
    }
    Ok(())
}

/// Control that carries the vehicle along the first trajectory segment: the
/// segment speed, and the steering rate that reaches the steering angle the
/// path demands at the next waypoint.
pub fn track(state: &VehicleState, traj: &Trajectory, params: &VehicleParams, dt: f64) -> ControlInput {
    let p = &traj.points;
    let u = ((p[1][0] - p[0][0]).hypot(p[1][1] - p[0][1]) / dt).clamp(0.0, params.u_max);
    let beta_des = if p.len() >= 4 && u > 1e-3 {
        let mut d1 = [0.0; 2];
        let mut d2 = [0.0; 2];
        let mut d3 = [0.0; 2];
        for k in 0..2 {
            d1[k] = (p[2][k] - p[0][k]) / (2.0 * dt);
            d2[k] = (p[2][k] - 2.0 * p[1][k] + p[0][k]) / (dt * dt);
            d3[k] = (p[3][k] - 3.0 * p[2][k] + 3.0 * p[1][k] - p[0][k]) / (dt * dt * dt);
        }
        let sample = FlatSample {
            position: p[1],
            d1,
            d2,
            d3,
        };
        dynamics::flat_recover(&sample, params)
            .map(|r| r.beta)
            .unwrap_or(state.beta)
    } else {
        state.beta
    };
    let beta_target = beta_des.clamp(-params.beta_max, params.beta_max);
    let omega = ((beta_target - state.beta) / dt).clamp(-params.omega_max, params.omega_max);
    ControlInput::new(u, omega)
}

/// Final outcome of every agent, given all events of an episode.
pub fn outcomes(agents: &[Agent], events: &[Event]) -> BTreeMap<AgentId, Outcome> {
    let mut out: BTreeMap<AgentId, Outcome> =
        agents.iter().map(|a| (a.id, Outcome::HorizonEnd)).collect();
    for e in events {
        for id in &e.agents {
            let slot = out.entry(*id).or_insert(Outcome::HorizonEnd);
            *slot = match (e.kind, *slot) {
                (EventKind::Collision, _) => Outcome::Collision,
                (EventKind::OffRoad, Outcome::Collision) => Outcome::Collision,
                (EventKind::OffRoad, _) => Outcome::OffRoad,
                (EventKind::MergeCompleted, Outcome::HorizonEnd) => Outcome::MergeCompleted,
                (_, current) => current,
            };
        }
    }
    out
}
