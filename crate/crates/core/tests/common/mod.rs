#![allow(dead_code)]

use std::path::PathBuf;

use comerge_core::harness::runner::PolicyMap;
use comerge_core::harness::{parse_config, RunConfig};
use comerge_core::planning::baseline::{baseline_decide, baseline_decide_constrained, Constraint};
use comerge_core::planning::{Decision, DecisionInput, Policy};
use comerge_core::scenario::AgentId;
use comerge_core::simulation::MetaAction;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join(name)
}

pub fn load_fixture(name: &str) -> RunConfig {
    let text = std::fs::read_to_string(fixture_path(name)).unwrap();
    parse_config(&text).unwrap()
}

fn only(keep: MetaAction) -> Constraint {
    Constraint {
        forbid: MetaAction::ALL.into_iter().filter(|a| *a != keep).collect(),
        reason: format!("scripted {keep}"),
    }
}

/// Ramp driver that holds its speed and starts the merge at a fixed station
/// whatever the target-lane gap. Baseline once merged.
pub struct PushyMerger {
    pub merge_at: f64,
}

impl Policy for PushyMerger {
    fn decide(&mut self, input: &DecisionInput<'_>) -> Decision {
        let obs = input.obs;
        if !obs.on_ramp || obs.maneuver_active() {
            return baseline_decide(obs, input.messages, input.history, input.ctx);
        }
        let keep = if obs.ego.x >= self.merge_at {
            MetaAction::Left
        } else {
            MetaAction::Idle
        };
        baseline_decide_constrained(obs, input.messages, input.history, input.ctx, &only(keep))
    }
}

/// Merge station of the scripted ramp car in `fixtures/comm_ablation.toml`.
pub const PUSHY_MERGE_AT: f64 = 150.0;

pub fn with_pushy(cfg: &RunConfig, agent: AgentId, merge_at: f64) -> PolicyMap {
    let mut map = comerge_core::harness::runner::build_policies(cfg).unwrap();
    map.insert(agent, Box::new(PushyMerger { merge_at }));
    map
}

/// Corruption applied to one planned trajectory. Waypoints 0 to 3 drive the
/// simulator and stay untouched; later ones are bent by `profile(k)`.
#[derive(Debug, Clone, Copy)]
pub enum Fault {
    /// Lateral drift reaching `offset` metres at the last waypoint.
    Drift { offset: f64 },
    /// Extra forward travel reaching `extra` metres at the last waypoint.
    Lunge { extra: f64 },
}

pub const UNTOUCHED: usize = 4;

pub fn apply_fault(points: &mut [[f64; 2]], fault: Fault) {
    let n = points.len();
    for (k, p) in points.iter_mut().enumerate().skip(UNTOUCHED) {
        let s = (k + 1 - UNTOUCHED) as f64 / (n - UNTOUCHED) as f64;
        match fault {
            Fault::Drift { offset } => p[1] += offset * s,
            Fault::Lunge { extra } => p[0] += extra * s * s,
        }
    }
}

/// Baseline driver whose plan is corrupted at scripted ticks.
pub struct FaultyPlanner {
    pub faults: Vec<(u64, Fault)>,
}

impl Policy for FaultyPlanner {
    fn decide(&mut self, input: &DecisionInput<'_>) -> Decision {
        let mut d = baseline_decide(input.obs, input.messages, input.history, input.ctx);
        if let Some((_, f)) = self.faults.iter().find(|(t, _)| *t == input.obs.tick) {
            apply_fault(&mut d.trajectory.points, *f);
        }
        d
    }
}

pub const DRIFT_TICK: u64 = 5;
pub const LUNGE_TICK: u64 = 15;

pub fn faulty_policies(cfg: &RunConfig) -> PolicyMap {
    let mut map = comerge_core::harness::runner::build_policies(cfg).unwrap();
    map.insert(
        AgentId(0),
        Box::new(FaultyPlanner {
            faults: vec![
                (DRIFT_TICK, Fault::Drift { offset: 2.0 }),
                (LUNGE_TICK, Fault::Lunge { extra: 30.0 }),
            ],
        }),
    );
    map
}
