//! Reflection records regenerated from a stored trace.

use std::io::Write;

use super::runner::state_before;
use super::trace::EpisodeTrace;
use super::HarnessError;
use crate::reflection::{emit_reflection_record, RecordContext, ReflectionRecord};

/// One record per failure, in trace order. The episode number is the run seed.
pub fn reflection_records(trace: &EpisodeTrace) -> Result<Vec<ReflectionRecord>, HarnessError> {
    trace.verify_hash()?;
    let ctx = trace.header.config.plan_context()?;
    let mut out = Vec::new();
    for (i, rec) in trace.ticks.iter().enumerate() {
        if rec.failures.is_empty() {
            continue;
        }
        let sim = state_before(trace, i)?;
        for f in &rec.failures {
            let obs = sim.observe(f.agent)?;
            let messages = rec
                .received
                .iter()
                .find(|d| d.agent == f.agent)
                .map(|d| d.messages.as_slice())
                .unwrap_or(&[]);
            let decision = &rec
                .decisions
                .iter()
                .find(|d| d.agent == f.agent)
                .ok_or_else(|| HarnessError::Policy(format!("tick {}: no decision for {}", rec.tick, f.agent)))?
                .decision;
            out.push(emit_reflection_record(
                f,
                &RecordContext {
                    episode: trace.header.seed,
                    obs: &obs,
                    messages,
                    decision,
                    plan: &ctx,
                },
            )?);
        }
    }
    Ok(out)
}

pub fn write_records<W: Write>(records: &[ReflectionRecord], mut w: W) -> std::io::Result<()> {
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r).expect("records serialize"))?;
    }
    w.flush()
}
