//! Run configuration: a TOML file with fixed sections, unknown keys rejected.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::communication::ChannelConfig;
use crate::dynamics::VehicleParams;
use crate::metrics::{ComfortLimits, ScoreWeights, SPEED_LIMIT, TTC_THRESHOLD};
use crate::planning::external::{transport_from_endpoint, ENDPOINT_ENV};
use crate::planning::{BaselineConfig, PlanContext};
use crate::reflection::Thresholds;
use crate::scenario::{classify_merge_condition, AgentId, MergeCondition, ScenarioConfig};
use crate::simulation::{ScoreConfig, SimSettings};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{0}")]
    Parse(String),
    #[error("invalid `{key}`: {msg}")]
    Invalid { key: String, msg: String },
}

fn invalid(key: &str, msg: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_owned(),
        msg: msg.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    #[default]
    Baseline,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoliciesSection {
    pub default: PolicyKind,
    /// Agents that use the external reasoner regardless of `default`.
    pub external_agents: Vec<u32>,
    /// Agents that use the baseline regardless of `default`.
    pub baseline_agents: Vec<u32>,
    /// `tcp://HOST:PORT` or `exec:PROGRAM [ARGS...]`.
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub baseline: BaselineConfig,
}

impl Default for PoliciesSection {
    fn default() -> Self {
        Self {
            default: PolicyKind::Baseline,
            external_agents: Vec::new(),
            baseline_agents: Vec::new(),
            endpoint: None,
            timeout_ms: 5000,
            baseline: BaselineConfig::default(),
        }
    }
}

impl PoliciesSection {
    pub fn kind_for(&self, id: AgentId) -> PolicyKind {
        if self.external_agents.contains(&id.0) {
            PolicyKind::External
        } else if self.baseline_agents.contains(&id.0) {
            PolicyKind::Baseline
        } else {
            self.default
        }
    }

    /// The environment variable wins over the configured endpoint.
    pub fn resolved_endpoint(&self) -> Option<String> {
        std::env::var(ENDPOINT_ENV)
            .ok()
            .filter(|s| !s.is_empty())
            .or_else(|| self.endpoint.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsSection {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub alpha_pen: f64,
    pub beta_pen: f64,
    pub ttc_threshold: f64,
    pub speed_limit: f64,
    pub sigma: f64,
    pub collision_penalty: f64,
    pub comfort: ComfortLimits,
}

impl Default for WeightsSection {
    fn default() -> Self {
        let w = ScoreWeights::default();
        Self {
            k1: w.k1,
            k2: w.k2,
            k3: w.k3,
            alpha_pen: w.alpha_pen,
            beta_pen: w.beta_pen,
            ttc_threshold: TTC_THRESHOLD,
            speed_limit: SPEED_LIMIT,
            sigma: 0.0,
            collision_penalty: 1.0,
            comfort: ComfortLimits::default(),
        }
    }
}

impl WeightsSection {
    pub fn score_config(&self) -> ScoreConfig {
        ScoreConfig {
            weights: ScoreWeights {
                k1: self.k1,
                k2: self.k2,
                k3: self.k3,
                alpha_pen: self.alpha_pen,
                beta_pen: self.beta_pen,
            },
            comfort: self.comfort,
            ttc_threshold: self.ttc_threshold,
            speed_limit: self.speed_limit,
            sigma: self.sigma,
            collision_penalty: self.collision_penalty,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    /// Episode length in ticks.
    pub horizon: u64,
    pub dt: f64,
    /// Planned trajectory length (s).
    pub plan_horizon: f64,
    pub maneuver_window: f64,
    pub sensing_radius: f64,
    pub noise_sigma: f64,
    pub gamma: f64,
    /// Past (observation, action) pairs kept per agent.
    pub history_len: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            horizon: 400,
            dt: 0.1,
            plan_horizon: 3.0,
            maneuver_window: 3.0,
            sensing_radius: 100.0,
            noise_sigma: 0.0,
            gamma: 0.99,
            history_len: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub vehicles: VehicleParams,
    #[serde(default)]
    pub policies: PoliciesSection,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub weights: WeightsSection,
    #[serde(default)]
    pub run: RunSection,
}

impl RunConfig {
    /// The default scenario with every other section at its default.
    pub fn with_defaults() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            vehicles: VehicleParams::default(),
            policies: PoliciesSection::default(),
            channel: ChannelConfig::default(),
            thresholds: Thresholds::default(),
            weights: WeightsSection::default(),
            run: RunSection::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let net = self.scenario.network().map_err(|e| invalid("scenario", e))?;
        if classify_merge_condition(&net) == MergeCondition::NonConflicting {
            return Err(invalid(
                "scenario",
                format!(
                    "lane counts {} main + {} ramp -> {} are non-conflicting",
                    net.main_lanes, net.ramp_lanes, net.post_merge_lanes
                ),
            ));
        }
        if self.scenario.centerline_samples < 2 {
            return Err(invalid("scenario.centerline_samples", "must be at least 2"));
        }
        self.vehicles.validate().map_err(|e| invalid("vehicles", e))?;
        self.channel.validate().map_err(|e| invalid("channel.drop_probability", e))?;
        self.thresholds.validate().map_err(|e| invalid("thresholds", e))?;
        self.weights
            .score_config()
            .weights
            .validate()
            .map_err(|e| invalid("weights", e))?;
        let r = &self.run;
        if !(r.dt > 0.0) {
            return Err(invalid("run.dt", "must be positive"));
        }
        let steps = r.plan_horizon / r.dt;
        if !(r.plan_horizon > 0.0) || (steps - steps.round()).abs() > 1e-9 {
            return Err(invalid("run.plan_horizon", "must be a positive multiple of run.dt"));
        }
        if !(r.maneuver_window >= r.dt) {
            return Err(invalid("run.maneuver_window", "must be at least run.dt"));
        }
        if !(r.sensing_radius > 0.0) {
            return Err(invalid("run.sensing_radius", "must be positive"));
        }
        if !(r.noise_sigma >= 0.0) {
            return Err(invalid("run.noise_sigma", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&r.gamma) {
            return Err(invalid("run.gamma", "must lie in [0, 1]"));
        }
        let p = &self.policies;
        let ids: BTreeSet<u32> = (0..self.scenario.spawns.len() as u32).collect();
        for (key, list) in [("policies.external_agents", &p.external_agents), ("policies.baseline_agents", &p.baseline_agents)] {
            if let Some(bad) = list.iter().find(|i| !ids.contains(i)) {
                return Err(invalid(key, format!("agent {bad} does not exist")));
            }
        }
        if let Some(e) = &p.endpoint {
            transport_from_endpoint(e).map_err(|err| invalid("policies.endpoint", err))?;
        }
        let needs_external = ids.iter().any(|&i| p.kind_for(AgentId(i)) == PolicyKind::External);
        if needs_external && p.resolved_endpoint().is_none() {
            return Err(invalid(
                "policies.endpoint",
                format!("external policies need an endpoint (or {ENDPOINT_ENV})"),
            ));
        }
        Ok(())
    }

    pub fn sim_settings(&self) -> SimSettings {
        SimSettings {
            dt: self.run.dt,
            sensing_radius: self.run.sensing_radius,
            noise_sigma: self.run.noise_sigma,
            maneuver_window: self.run.maneuver_window,
            seed: self.run.seed,
        }
    }

    pub fn plan_context(&self) -> Result<PlanContext, ConfigError> {
        Ok(PlanContext {
            net: self.scenario.network().map_err(|e| invalid("scenario", e))?,
            params: self.vehicles,
            dt: self.run.dt,
            horizon: self.run.plan_horizon,
            maneuver_window: self.run.maneuver_window,
            baseline: self.policies.baseline,
        })
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().to_owned()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// A standalone `[weights]` table, as used for replay overrides.
pub fn parse_weights(text: &str) -> Result<WeightsSection, ConfigError> {
    let w: WeightsSection = toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().to_owned()))?;
    w.score_config().weights.validate().map_err(|e| invalid("weights", e))?;
    Ok(w)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_config(&text)
}
