//! Speech-act messages and the broadcast channel.
//!
//! A message reveals the sender's state and commits it to the meta-action it
//! is executing. The channel delivers each copy after a fixed delay unless the
//! copy is dropped; drop draws come from their own seeded stream.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planning::Decision;
use crate::rng;
use crate::scenario::{in_collaborative_area, AgentId, RoadNetwork};
use crate::simulation::{target_lane, MetaAction, Observation};

/// Main-road vehicles this far upstream of the merge point also broadcast (m).
pub const MAIN_ROAD_BROADCAST_RANGE: f64 = 120.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("drop probability must lie in [0, 1], got {0}")]
    InvalidDropProbability(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub sender: AgentId,
    pub send_tick: u64,
    pub position: [f64; 2],
    pub lane: usize,
    pub speed: f64,
    pub distance_to_merge: f64,
    pub on_ramp: bool,
    pub committed: MetaAction,
    /// Lane the sender will occupy once the committed action completes.
    pub target_lane: usize,
    /// Duration the commitment covers (s).
    pub window: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub enabled: bool,
    /// Delivery delay in ticks.
    pub delay: u64,
    pub drop_probability: f64,
    /// Seed of the drop stream; the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            delay: 0,
            drop_probability: 0.0,
            seed: None,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(ChannelError::InvalidDropProbability(self.drop_probability));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChannelStats {
    /// Copies enqueued, one per recipient.
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BroadcastOutcome {
    Enqueued { copies: usize },
    Suppressed,
}

pub fn encode_message(decision: &Decision, obs: &Observation) -> Message {
    Message {
        sender: obs.agent,
        send_tick: obs.tick,
        position: obs.ego.position(),
        lane: obs.lane,
        speed: obs.speed,
        distance_to_merge: obs.distance_to_merge,
        on_ramp: obs.on_ramp,
        committed: decision.meta_action,
        target_lane: target_lane(decision.meta_action, obs.lane),
        window: decision.trajectory.horizon(),
    }
}

/// Whether a vehicle in this situation may talk: ramp vehicles inside the
/// collaborative area, other vehicles shortly before the merge point.
pub fn may_broadcast(obs: &Observation, net: &RoadNetwork) -> bool {
    if obs.on_ramp {
        in_collaborative_area(&obs.ego, net).unwrap_or(false)
    } else {
        (0.0..=MAIN_ROAD_BROADCAST_RANGE).contains(&obs.distance_to_merge)
    }
}

#[derive(Debug, Clone)]
pub struct Channel {
    pub config: ChannelConfig,
    drops: ChaCha8Rng,
    queue: BTreeMap<(u64, AgentId), Vec<Message>>,
    stats: ChannelStats,
}

impl Channel {
    pub fn new(config: ChannelConfig, run_seed: u64) -> Result<Self, ChannelError> {
        config.validate()?;
        Ok(Self {
            config,
            drops: rng::substream(config.seed.unwrap_or(run_seed), rng::DROP_STREAM, &[]),
            queue: BTreeMap::new(),
            stats: ChannelStats::default(),
        })
    }

    /// Enqueues one copy of `message` per recipient (excluding the sender) if
    /// the sender is allowed to talk.
    pub fn broadcast(
        &mut self,
        obs: &Observation,
        decision: &Decision,
        net: &RoadNetwork,
        recipients: &[AgentId],
    ) -> (BroadcastOutcome, Option<Message>) {
        if !may_broadcast(obs, net) {
            return (BroadcastOutcome::Suppressed, None);
        }
        let message = encode_message(decision, obs);
        let deliver = message.send_tick + self.config.delay;
        let mut copies = 0;
        for &r in recipients.iter().filter(|&&r| r != message.sender) {
            self.stats.sent += 1;
            copies += 1;
            let draw: f64 = self.drops.random();
            if draw < self.config.drop_probability {
                self.stats.dropped += 1;
                continue;
            }
            self.stats.in_flight += 1;
            self.queue.entry((deliver, r)).or_default().push(message.clone());
        }
        (BroadcastOutcome::Enqueued { copies }, Some(message))
    }

    /// Messages due for `agent` at `tick`, sorted by sender. Always empty when
    /// communication is disabled.
    pub fn collect(&mut self, agent: AgentId, tick: u64) -> Vec<Message> {
        if !self.config.enabled {
            return Vec::new();
        }
        let mut out = self.queue.remove(&(tick, agent)).unwrap_or_default();
        self.stats.in_flight -= out.len() as u64;
        self.stats.delivered += out.len() as u64;
        out.sort_by_key(|m| m.sender);
        out
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }
}
