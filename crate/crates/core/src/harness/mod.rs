//! Configuration, episode orchestration, traces, replay and open-loop
//! evaluation.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod reflect;
pub mod replay;
pub mod runner;
pub mod trace;

use thiserror::Error;

pub use config::{load_config, parse_config, ConfigError, RunConfig};
pub use dataset::{ingest_dataset, TrajectoryDataset};
pub use eval::{evaluate_open_loop, OpenLoopReport};
pub use reflect::reflection_records;
pub use replay::{replay, replay_trace, ReplayReport};
pub use runner::{run_episode, run_episode_with};
pub use trace::{EpisodeTrace, TraceError};

use crate::reflection::ReflectionError;
use crate::scenario::{AgentId, ScenarioError};
use crate::simulation::SimError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Reflection(#[from] ReflectionError),
    #[error("policy: {0}")]
    Policy(String),
    #[error("recomputed scores differ from the trace at tick {tick} (agent {agent:?})")]
    ScoreMismatch { tick: u64, agent: Option<AgentId> },
}
