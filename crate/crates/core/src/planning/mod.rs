//! Decision making: policy interface, rule-based baseline, trajectory
//! refinement in flat-output space, trajectory tokens and the external
//! reasoning protocol.

pub mod baseline;
pub mod external;
pub mod refine;
pub mod tokenizer;

use serde::{Deserialize, Serialize};

use crate::communication::Message;
use crate::dynamics::VehicleParams;
use crate::scenario::RoadNetwork;
use crate::simulation::{HistoryBuffer, MetaAction, Observation};

pub use baseline::{baseline_decide, baseline_decide_constrained, BaselineConfig, Constraint};
pub use external::{external_decide, ExternalPolicy, Transport, TransportError};
pub use refine::{refine_to_trajectory, refine_with_fallback, PlanError, RefineSpec};
pub use tokenizer::{detokenize_trajectory, lm_loss, mean_lm_loss, tokenize_trajectory, TokenSequence};

/// Waypoints at a uniform time spacing; the first one is the current position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub points: Vec<[f64; 2]>,
}

impl Trajectory {
    pub fn horizon(&self) -> f64 {
        self.points.len().saturating_sub(1) as f64 * self.dt
    }

    /// Waypoints relative to `origin`.
    pub fn relative_to(&self, origin: [f64; 2]) -> Vec<[f64; 2]> {
        self.points
            .iter()
            .map(|p| [p[0] - origin[0], p[1] - origin[1]])
            .collect()
    }

    pub fn from_relative(dt: f64, origin: [f64; 2], rel: &[[f64; 2]]) -> Self {
        Self {
            dt,
            points: rel.iter().map(|p| [p[0] + origin[0], p[1] + origin[1]]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub meta_action: MetaAction,
    pub trajectory: Trajectory,
    pub rationale: String,
    pub message: Option<Message>,
    /// Set when the policy's own answer was replaced by a fallback.
    pub fallback: bool,
    pub fallback_reason: Option<String>,
}

impl Decision {
    pub fn new(meta_action: MetaAction, trajectory: Trajectory) -> Self {
        Self {
            meta_action,
            trajectory,
            rationale: String::new(),
            message: None,
            fallback: false,
            fallback_reason: None,
        }
    }
}

/// Static information every policy may use besides its observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanContext {
    pub net: RoadNetwork,
    pub params: VehicleParams,
    pub dt: f64,
    pub horizon: f64,
    pub maneuver_window: f64,
    pub baseline: BaselineConfig,
}

impl PlanContext {
    /// Refinement settings for an agent in the given observation.
    pub fn refine_spec(&self, obs: &Observation) -> RefineSpec {
        RefineSpec {
            horizon: self.horizon,
            dt: self.dt,
            maneuver_window: self.maneuver_window,
            lateral_window: obs
                .maneuver_remaining
                .map_or(self.maneuver_window, |r| r.max(1.0)),
        }
    }
}

pub struct DecisionInput<'a> {
    pub obs: &'a Observation,
    pub messages: &'a [Message],
    pub history: &'a HistoryBuffer,
    pub ctx: &'a PlanContext,
}

pub trait Policy: Send {
    fn decide(&mut self, input: &DecisionInput<'_>) -> Decision;
}

/// The rule-based baseline as a [`Policy`].
#[derive(Debug, Clone, Default)]
pub struct BaselinePolicy;

impl Policy for BaselinePolicy {
    fn decide(&mut self, input: &DecisionInput<'_>) -> Decision {
        baseline_decide(input.obs, input.messages, input.history, input.ctx)
    }
}
