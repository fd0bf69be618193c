//! Recomputes per-tick scores and the episode summary from a stored trace.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::WeightsSection;
use super::runner::{initial_positions, push_positions};
use super::trace::EpisodeTrace;
use super::HarnessError;
use crate::scenario::AgentId;
use crate::simulation::scoring::{score_tick, summarize, EpisodeMetrics};
use crate::simulation::StepScores;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    /// False when scored with weights other than the recorded ones.
    pub canonical: bool,
    pub ticks: u64,
    pub scores: Vec<Vec<StepScores>>,
    pub metrics: EpisodeMetrics,
    pub stored_metrics: EpisodeMetrics,
}

pub fn replay(path: &Path, weights: Option<WeightsSection>) -> Result<ReplayReport, HarnessError> {
    replay_trace(&EpisodeTrace::load(path)?, weights)
}

pub fn replay_trace(trace: &EpisodeTrace, weights: Option<WeightsSection>) -> Result<ReplayReport, HarnessError> {
    trace.verify_hash()?;
    let cfg = &trace.header.config;
    let canonical = weights.is_none_or(|w| w == cfg.weights);
    let score_cfg = weights.unwrap_or(cfg.weights).score_config();
    let net = cfg.scenario.network()?;
    let mut positions = initial_positions(&trace.header.agents);
    let mut prev = &trace.header.agents;
    let mut all_scores = Vec::with_capacity(trace.ticks.len());
    let mut all_events = Vec::new();
    for rec in &trace.ticks {
        let active: Vec<AgentId> = prev.iter().filter(|a| a.alive).map(|a| a.id).collect();
        push_positions(&mut positions, &active, &rec.agents);
        let scores = score_tick(
            &score_cfg,
            &cfg.vehicles,
            net.lane_width,
            cfg.run.sensing_radius,
            cfg.run.dt,
            &active,
            &rec.agents,
            &positions,
            &rec.events,
        )?;
        if canonical && scores != rec.scores {
            let agent = scores
                .iter()
                .zip(&rec.scores)
                .find(|(a, b)| a != b)
                .map(|(a, _)| a.agent);
            return Err(HarnessError::ScoreMismatch { tick: rec.tick, agent });
        }
        all_events.extend(rec.events.iter().cloned());
        all_scores.push(scores);
        prev = &rec.agents;
    }
    let metrics = summarize(&all_scores, &all_events, &score_cfg, cfg.run.gamma)?;
    if canonical && metrics != trace.footer.metrics {
        return Err(HarnessError::ScoreMismatch {
            tick: trace.footer.ticks,
            agent: None,
        });
    }
    Ok(ReplayReport {
        canonical,
        ticks: trace.footer.ticks,
        scores: all_scores,
        metrics,
        stored_metrics: trace.footer.metrics.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::RunConfig;
    use crate::harness::run_episode;
    use crate::harness::trace::TraceError;

    fn trace() -> EpisodeTrace {
        let mut cfg = RunConfig::with_defaults();
        cfg.run.horizon = 30;
        run_episode(&cfg).unwrap()
    }

    #[test]
    fn fresh_trace_replays_exactly() {
        let t = trace();
        let r = replay_trace(&t, None).unwrap();
        assert!(r.canonical);
        assert_eq!(r.metrics, t.footer.metrics);
        let stored: Vec<Vec<StepScores>> = t.ticks.iter().map(|k| k.scores.clone()).collect();
        assert_eq!(r.scores, stored);
    }

    #[test]
    fn altered_weights_are_flagged() {
        let t = trace();
        let w = WeightsSection {
            k1: 0.5,
            k2: 0.25,
            k3: 0.25,
            ..WeightsSection::default()
        };
        let r = replay_trace(&t, Some(w)).unwrap();
        assert!(!r.canonical);
        assert_ne!(r.metrics.ds, r.stored_metrics.ds);
    }

    #[test]
    fn corrupted_and_truncated_files() {
        let text = trace().to_jsonl();
        let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
        lines[6] = lines[6].replacen("\"cs\":", "\"cs\":\"x", 1);
        let err = EpisodeTrace::read_from(lines.join("\n").as_bytes()).unwrap_err();
        assert!(matches!(err, TraceError::Corrupted { tick: 5, .. }), "{err}");

        let cut: Vec<&str> = text.lines().take(10).collect();
        let err = EpisodeTrace::read_from(cut.join("\n").as_bytes()).unwrap_err();
        assert!(matches!(err, TraceError::Truncated(_)), "{err}");
    }

    #[test]
    fn hash_mismatch_detected() {
        let mut t = trace();
        t.header.config.run.gamma = 0.5;
        assert!(matches!(
            replay_trace(&t, None),
            Err(HarnessError::Trace(TraceError::HashMismatch { .. }))
        ));
    }

    #[test]
    fn tampered_scores_detected() {
        let mut t = trace();
        t.ticks[3].scores[0].es += 1e-9;
        assert!(matches!(
            replay_trace(&t, None),
            Err(HarnessError::ScoreMismatch { tick: 3, .. })
        ));
    }
}
