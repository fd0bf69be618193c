//! The closed-loop episode: collect, observe, decide, broadcast, advance,
//! detect failures, score.

use std::collections::BTreeMap;
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::config::{PolicyKind, RunConfig};
use super::trace::{AgentDecision, Delivery, EpisodeTrace, TickRecord, TraceFooter, TraceHeader, TRACE_VERSION};
use super::HarnessError;
use crate::communication::{Channel, Message};
use crate::planning::external::transport_from_endpoint;
use crate::planning::{BaselinePolicy, Decision, DecisionInput, ExternalPolicy, PlanContext, Policy};
use crate::reflection::{detect_failures_with, forecast_neighbors, FailureCase, FailureContext, NeighborState};
use crate::scenario::{build_scenario, AgentId};
use crate::simulation::scoring::{score_tick, summarize, COMFORT_WINDOW};
use crate::simulation::{outcomes, Agent, Event, HistoryBuffer, Observation, SimError, SimState, StepScores};

pub type PolicyMap = BTreeMap<AgentId, Box<dyn Policy>>;

/// Policies as selected by the `[policies]` section.
pub fn build_policies(cfg: &RunConfig) -> Result<PolicyMap, HarnessError> {
    let mut out: PolicyMap = BTreeMap::new();
    for i in 0..cfg.scenario.spawns.len() as u32 {
        let id = AgentId(i);
        let policy: Box<dyn Policy> = match cfg.policies.kind_for(id) {
            PolicyKind::Baseline => Box::new(BaselinePolicy),
            PolicyKind::External => {
                let endpoint = cfg.policies.resolved_endpoint().ok_or_else(|| {
                    HarnessError::Config(super::config::ConfigError::Invalid {
                        key: "policies.endpoint".into(),
                        msg: "missing".into(),
                    })
                })?;
                Box::new(ExternalPolicy {
                    transport: transport_from_endpoint(&endpoint).map_err(|e| HarnessError::Policy(e.to_string()))?,
                    timeout: Duration::from_millis(cfg.policies.timeout_ms),
                })
            }
        };
        out.insert(id, policy);
    }
    Ok(out)
}

pub fn run_episode(cfg: &RunConfig) -> Result<EpisodeTrace, HarnessError> {
    cfg.validate()?;
    run_episode_with(cfg, build_policies(cfg)?)
}

/// Runs with explicit policies; agents missing from `policies` use the baseline.
pub fn run_episode_with(cfg: &RunConfig, mut policies: PolicyMap) -> Result<EpisodeTrace, HarnessError> {
    let ctx = cfg.plan_context()?;
    let seed = cfg.run.seed;
    let (net, spawns) = build_scenario(&cfg.scenario, &cfg.vehicles, seed)?;
    let mut sim = SimState::new(net, cfg.vehicles, cfg.sim_settings(), &spawns)?;
    let mut channel = Channel::new(cfg.channel, seed).map_err(|e| HarnessError::Policy(e.to_string()))?;
    let score_cfg = cfg.weights.score_config();
    let header = TraceHeader {
        version: TRACE_VERSION,
        seed,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        agents: sim.agents.clone(),
    };
    let mut histories: BTreeMap<AgentId, HistoryBuffer> = BTreeMap::new();
    let mut positions = initial_positions(&sim.agents);
    let mut ticks = Vec::new();
    let mut all_events = Vec::new();
    let mut all_scores = Vec::new();

    for _ in 0..cfg.run.horizon {
        let active = sim.alive_ids();
        if active.is_empty() {
            break;
        }
        let tick = sim.tick;
        // Messages sent in the previous round, plus any configured delay.
        let mut inbox: BTreeMap<AgentId, Vec<Message>> = BTreeMap::new();
        for &id in &active {
            let msgs = match tick.checked_sub(1) {
                Some(t) => channel.collect(id, t),
                None => Vec::new(),
            };
            inbox.insert(id, msgs);
        }
        let mut observations = BTreeMap::new();
        for &id in &active {
            observations.insert(id, sim.observe(id)?);
        }

        let mut decisions = BTreeMap::new();
        for &id in &active {
            let history = histories
                .entry(id)
                .or_insert_with(|| HistoryBuffer::new(cfg.run.history_len));
            let input = DecisionInput {
                obs: &observations[&id],
                messages: &inbox[&id],
                history,
                ctx: &ctx,
            };
            let d = match policies.get_mut(&id) {
                Some(p) => p.decide(&input),
                None => BaselinePolicy.decide(&input),
            };
            decisions.insert(id, d);
        }
        let (next, events) = advance_with_fallback(&sim, &mut decisions, &observations, &inbox, &histories, &ctx)?;

        for &id in &active {
            let d = decisions.get_mut(&id).expect("decision per active agent");
            let (_, message) = channel.broadcast(&observations[&id], d, &sim.net, &active);
            d.message = message;
            histories
                .get_mut(&id)
                .expect("history per active agent")
                .push(observations[&id].clone(), d.meta_action);
        }

        push_positions(&mut positions, &active, &next.agents);
        let scores = score_tick(
            &score_cfg,
            &sim.params,
            sim.net.lane_width,
            sim.settings.sensing_radius,
            sim.settings.dt,
            &active,
            &next.agents,
            &positions,
            &events,
        )?;
        let failures = tick_failures(cfg, &sim, &next, &observations, &decisions, &scores)?;

        ticks.push(TickRecord {
            tick,
            observation_digest: observation_digest(&observations),
            received: inbox
                .into_iter()
                .map(|(agent, messages)| Delivery { agent, messages })
                .collect(),
            decisions: decisions
                .into_iter()
                .map(|(agent, decision)| AgentDecision { agent, decision })
                .collect(),
            events: events.clone(),
            agents: next.agents.clone(),
            scores: scores.clone(),
            failures,
        });
        all_events.extend(events);
        all_scores.push(scores);
        sim = next;
    }

    let metrics = summarize(&all_scores, &all_events, &score_cfg, cfg.run.gamma)?;
    let footer = TraceFooter {
        ticks: ticks.len() as u64,
        metrics,
        outcomes: outcomes(&sim.agents, &all_events).into_iter().collect(),
        channel: channel.stats(),
    };
    Ok(EpisodeTrace { header, ticks, footer })
}

fn error_agent(e: &SimError) -> Option<AgentId> {
    match e {
        SimError::MissingDecision(a)
        | SimError::TimeBase { agent: a, .. }
        | SimError::ShortTrajectory { agent: a, .. }
        | SimError::StartMismatch { agent: a, .. }
        | SimError::IllegalAction { agent: a, .. }
        | SimError::Dynamics { agent: a, .. } => Some(*a),
        _ => None,
    }
}

/// Advances the world; a decision the simulator rejects is replaced by the
/// baseline, marked as a fallback, and the step is retried.
fn advance_with_fallback(
    sim: &SimState,
    decisions: &mut BTreeMap<AgentId, Decision>,
    observations: &BTreeMap<AgentId, Observation>,
    inbox: &BTreeMap<AgentId, Vec<Message>>,
    histories: &BTreeMap<AgentId, HistoryBuffer>,
    ctx: &PlanContext,
) -> Result<(SimState, Vec<Event>), HarnessError> {
    let mut replaced = Vec::new();
    loop {
        match sim.advance(decisions) {
            Ok(r) => return Ok(r),
            Err(e) => {
                let Some(id) = error_agent(&e) else {
                    return Err(e.into());
                };
                if replaced.contains(&id) {
                    return Err(e.into());
                }
                replaced.push(id);
                let empty = HistoryBuffer::new(0);
                let mut d = crate::planning::baseline_decide(
                    &observations[&id],
                    &inbox[&id],
                    histories.get(&id).unwrap_or(&empty),
                    ctx,
                );
                d.fallback = true;
                d.fallback_reason = Some(format!("rejected by simulator: {e}"));
                decisions.insert(id, d);
            }
        }
    }
}

pub(crate) fn initial_positions(agents: &[Agent]) -> BTreeMap<AgentId, Vec<[f64; 2]>> {
    agents.iter().map(|a| (a.id, vec![a.state.position()])).collect()
}

pub(crate) fn push_positions(positions: &mut BTreeMap<AgentId, Vec<[f64; 2]>>, active: &[AgentId], next: &[Agent]) {
    for a in next.iter().filter(|a| active.contains(&a.id)) {
        let p = positions.entry(a.id).or_default();
        p.push(a.state.position());
        if p.len() > COMFORT_WINDOW {
            p.remove(0);
        }
    }
}

fn observation_digest(obs: &BTreeMap<AgentId, Observation>) -> String {
    let values: Vec<&Observation> = obs.values().collect();
    let json = serde_json::to_string(&values).expect("observations serialize");
    hex::encode(Sha256::digest(json.as_bytes()))
}

fn tick_failures(
    cfg: &RunConfig,
    sim: &SimState,
    next: &SimState,
    observations: &BTreeMap<AgentId, Observation>,
    decisions: &BTreeMap<AgentId, Decision>,
    scores: &[StepScores],
) -> Result<Vec<FailureCase>, HarnessError> {
    let steps = (cfg.run.plan_horizon / cfg.run.dt).round() as usize;
    let everyone: Vec<NeighborState> = sim
        .agents
        .iter()
        .filter(|a| a.alive)
        .map(|a| NeighborState {
            id: a.id,
            state: a.state,
            control: a.control,
        })
        .collect();
    let forecasts = forecast_neighbors(&everyone, &sim.params, sim.settings.dt, steps);
    let mut out = Vec::new();
    for s in scores {
        let obs = &observations[&s.agent];
        let decision = &decisions[&s.agent];
        let neighbors: Vec<NeighborState> = obs
            .neighbors
            .iter()
            .filter_map(|n| sim.agent(n.id).ok())
            .map(|a| NeighborState {
                id: a.id,
                state: a.state,
                control: a.control,
            })
            .collect();
        let route = &next.agent(s.agent)?.route;
        let traj = &decision.trajectory;
        let s_from = obs.ego.x;
        let s_to = traj.points.iter().map(|p| p[0]).fold(s_from, f64::max) + 1.0;
        let centerline = route.sample_centerline(&sim.net, s_from, s_to, cfg.scenario.centerline_samples);
        let fc = FailureContext {
            tick: sim.tick,
            agent: s.agent,
            trajectory: traj,
            ego_heading: obs.ego.alpha,
            neighbors: &neighbors,
            centerline: &centerline,
            es: s.es,
            cs: s.cs,
            params: &sim.params,
        };
        out.extend(detect_failures_with(&fc, &forecasts, &cfg.thresholds)?);
    }
    Ok(out)
}

/// The world as it was before the step recorded at `index`.
pub fn state_before(trace: &EpisodeTrace, index: usize) -> Result<SimState, HarnessError> {
    let cfg = &trace.header.config;
    let net = cfg.scenario.network()?;
    let mut sim = SimState::new(net, cfg.vehicles, cfg.sim_settings(), &[])?;
    sim.tick = trace.ticks.get(index).map_or(trace.ticks.len() as u64, |t| t.tick);
    sim.agents = match index {
        0 => trace.header.agents.clone(),
        i => trace.ticks[i - 1].agents.clone(),
    };
    Ok(sim)
}
