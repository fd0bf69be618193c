//! Episode traces as JSON Lines: a header, one record per tick, a footer.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::config::RunConfig;
use crate::communication::{ChannelStats, Message};
use crate::planning::Decision;
use crate::reflection::FailureCase;
use crate::scenario::AgentId;
use crate::simulation::scoring::EpisodeMetrics;
use crate::simulation::{Agent, Event, Outcome, StepScores};

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace is empty")]
    Empty,
    #[error("line {line}: expected a header record")]
    MissingHeader { line: usize },
    #[error("unsupported trace version {0}")]
    Version(u32),
    #[error("corrupted record for tick {tick} (line {line}): {msg}")]
    Corrupted { tick: u64, line: usize, msg: String },
    #[error("tick {tick} (line {line}) does not follow tick {previous:?}")]
    NonMonotonic { tick: u64, previous: Option<u64>, line: usize },
    #[error("truncated trace: {0}")]
    Truncated(String),
    #[error("config hash mismatch: header says {stored}, config hashes to {computed}")]
    HashMismatch { stored: String, computed: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    /// Agents before the first tick.
    pub agents: Vec<Agent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDecision {
    pub agent: AgentId,
    /// The executed decision; `message` holds what was broadcast, if anything.
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub agent: AgentId,
    pub messages: Vec<Message>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    /// SHA-256 over the observations the policies saw.
    pub observation_digest: String,
    pub received: Vec<Delivery>,
    pub decisions: Vec<AgentDecision>,
    pub events: Vec<Event>,
    /// Agents after the step.
    pub agents: Vec<Agent>,
    pub scores: Vec<StepScores>,
    pub failures: Vec<FailureCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub ticks: u64,
    pub metrics: EpisodeMetrics,
    pub outcomes: Vec<(AgentId, Outcome)>,
    pub channel: ChannelStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum TraceLine {
    Header(TraceHeader),
    Tick(TickRecord),
    Footer(TraceFooter),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub ticks: Vec<TickRecord>,
    pub footer: TraceFooter,
}

fn line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("trace records serialize")
}

impl EpisodeTrace {
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", line(&TraceLine::Header(self.header.clone())))?;
        for t in &self.ticks {
            writeln!(w, "{}", line(&TraceLine::Tick(t.clone())))?;
        }
        writeln!(w, "{}", line(&TraceLine::Footer(self.footer.clone())))?;
        w.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// SHA-256 of the serialized trace.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    /// Parses a trace and checks its structure; the config hash is checked
    /// separately by [`EpisodeTrace::verify_hash`].
    pub fn read_from<R: BufRead>(r: R) -> Result<Self, TraceError> {
        let mut header = None;
        let mut ticks: Vec<TickRecord> = Vec::new();
        let mut footer = None;
        for (i, text) in r.lines().enumerate() {
            let text = text?;
            let lineno = i + 1;
            if footer.is_some() {
                if text.trim().is_empty() {
                    continue;
                }
                return Err(TraceError::Corrupted {
                    tick: ticks.last().map_or(0, |t| t.tick),
                    line: lineno,
                    msg: "record after the footer".into(),
                });
            }
            let expected = ticks.last().map_or(0, |t| t.tick + 1);
            let parsed: TraceLine = match serde_json::from_str(&text) {
                Ok(p) => p,
                Err(_) if header.is_none() => return Err(TraceError::MissingHeader { line: lineno }),
                Err(e) => {
                    let tick = serde_json::from_str::<serde_json::Value>(&text)
                        .ok()
                        .and_then(|v| v.get("tick").and_then(|t| t.as_u64()))
                        .unwrap_or(expected);
                    return Err(TraceError::Corrupted {
                        tick,
                        line: lineno,
                        msg: e.to_string(),
                    });
                }
            };
            match (parsed, header.is_some()) {
                (TraceLine::Header(h), false) => {
                    if h.version != TRACE_VERSION {
                        return Err(TraceError::Version(h.version));
                    }
                    header = Some(h);
                }
                (_, false) => return Err(TraceError::MissingHeader { line: lineno }),
                (TraceLine::Header(_), true) => {
                    return Err(TraceError::Corrupted {
                        tick: expected,
                        line: lineno,
                        msg: "second header".into(),
                    })
                }
                (TraceLine::Tick(t), true) => {
                    if t.tick != expected {
                        return Err(TraceError::NonMonotonic {
                            tick: t.tick,
                            previous: ticks.last().map(|p| p.tick),
                            line: lineno,
                        });
                    }
                    ticks.push(t);
                }
                (TraceLine::Footer(f), true) => {
                    if f.ticks != ticks.len() as u64 {
                        return Err(TraceError::Truncated(format!(
                            "footer counts {} ticks, found {}",
                            f.ticks,
                            ticks.len()
                        )));
                    }
                    footer = Some(f);
                }
            }
        }
        let header = header.ok_or(TraceError::Empty)?;
        let footer = footer.ok_or_else(|| {
            TraceError::Truncated(format!("no footer after {} tick records", ticks.len()))
        })?;
        Ok(Self { header, ticks, footer })
    }

    pub fn load(path: &Path) -> Result<Self, TraceError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }

    pub fn verify_hash(&self) -> Result<(), TraceError> {
        let computed = self.header.config.hash();
        if computed != self.header.config_hash {
            return Err(TraceError::HashMismatch {
                stored: self.header.config_hash.clone(),
                computed,
            });
        }
        Ok(())
    }
}
