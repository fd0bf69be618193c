//! Text protocol for an external reasoning engine.
//!
//! Request: one document with the sections `SCENE`, `EGO`, `NEIGHBORS`,
//! `MESSAGES`, `HISTORY` and `INSTRUCTIONS`, each opened by `### NAME`.
//!
//! Response: line 1 is one of `LEFT`, `RIGHT`, `IDLE`, `ACC`, `DEC`; an
//! optional line 2 holds the trajectory tokens (`x,y;` per waypoint, relative
//! to the ego rear axle at decision time, first waypoint `0.00,0.00`); any
//! further lines are the rationale.
//!
//! Any transport failure, malformed answer, illegal action or infeasible
//! trajectory is replaced by the baseline decision with `fallback` set.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use thiserror::Error;

use super::refine::{check_waypoints, refine_with_fallback};
use super::tokenizer::{detokenize_trajectory, TokenSequence};
use super::{baseline_decide, Decision, DecisionInput, PlanContext, Policy, Trajectory};
use crate::communication::Message;
use crate::perception::{build_scene_description, rank_critical_objects};
use crate::simulation::{lane_change_block, HistoryBuffer, MetaAction, Observation};

/// Environment variable that overrides every configured external endpoint.
pub const ENDPOINT_ENV: &str = "COMERGE_REASONER_ENDPOINT";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("invalid endpoint {0:?}: expected tcp://HOST:PORT or exec:COMMAND")]
    InvalidEndpoint(String),
    #[error("no scripted response left")]
    Exhausted,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("empty response")]
    Empty,
    #[error("unknown meta-action {0:?}")]
    UnknownAction(String),
    #[error("bad trajectory line: {0}")]
    Trajectory(String),
}

pub trait Transport: Send {
    fn request(&mut self, prompt: &str, timeout: Duration) -> Result<String, TransportError>;
}

/// Sends the prompt over a fresh TCP connection, half-closes, reads to EOF.
#[derive(Debug, Clone)]
pub struct TcpTransport {
    pub address: String,
}

impl Transport for TcpTransport {
    fn request(&mut self, prompt: &str, timeout: Duration) -> Result<String, TransportError> {
        let io = |e: std::io::Error| {
            if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) {
                TransportError::Timeout(timeout)
            } else {
                TransportError::Io(e.to_string())
            }
        };
        let addr = self
            .address
            .to_socket_addrs()
            .map_err(io)?
            .next()
            .ok_or_else(|| TransportError::InvalidEndpoint(self.address.clone()))?;
        let mut stream = TcpStream::connect_timeout(&addr, timeout).map_err(io)?;
        stream.set_read_timeout(Some(timeout)).map_err(io)?;
        stream.set_write_timeout(Some(timeout)).map_err(io)?;
        stream.write_all(prompt.as_bytes()).map_err(io)?;
        stream.shutdown(std::net::Shutdown::Write).map_err(io)?;
        let mut out = String::new();
        stream.read_to_string(&mut out).map_err(io)?;
        Ok(out)
    }
}

/// Runs a command per request with the prompt on stdin.
#[derive(Debug, Clone)]
pub struct ProcessTransport {
    pub program: String,
    pub args: Vec<String>,
}

impl Transport for ProcessTransport {
    fn request(&mut self, prompt: &str, timeout: Duration) -> Result<String, TransportError> {
        let io = |e: std::io::Error| TransportError::Io(e.to_string());
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(io)?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = child.stdout.take().expect("piped stdout");
        let input = prompt.to_owned();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let _ = stdin.write_all(input.as_bytes());
            drop(stdin);
            let mut out = String::new();
            let res = stdout.read_to_string(&mut out).map(|_| out);
            let _ = tx.send(res);
        });
        match rx.recv_timeout(timeout) {
            Ok(res) => {
                let _ = child.wait();
                res.map_err(io)
            }
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(TransportError::Timeout(timeout))
            }
        }
    }
}

/// Replays canned responses in order; for tests and fixtures.
#[derive(Debug, Clone, Default)]
pub struct ScriptedTransport {
    pub responses: VecDeque<Result<String, TransportError>>,
    pub prompts: Vec<String>,
}

impl ScriptedTransport {
    pub fn new<I: IntoIterator<Item = Result<String, TransportError>>>(responses: I) -> Self {
        Self {
            responses: responses.into_iter().collect(),
            prompts: Vec::new(),
        }
    }
}

impl Transport for ScriptedTransport {
    fn request(&mut self, prompt: &str, _timeout: Duration) -> Result<String, TransportError> {
        self.prompts.push(prompt.to_owned());
        self.responses.pop_front().unwrap_or(Err(TransportError::Exhausted))
    }
}

/// Builds a transport from `tcp://HOST:PORT` or `exec:PROGRAM [ARGS...]`.
pub fn transport_from_endpoint(endpoint: &str) -> Result<Box<dyn Transport>, TransportError> {
    if let Some(addr) = endpoint.strip_prefix("tcp://") {
        if addr.rsplit_once(':').is_some_and(|(h, p)| !h.is_empty() && p.parse::<u16>().is_ok()) {
            return Ok(Box::new(TcpTransport {
                address: addr.to_owned(),
            }));
        }
    } else if let Some(cmd) = endpoint.strip_prefix("exec:") {
        let mut parts = cmd.split_whitespace().map(str::to_owned);
        if let Some(program) = parts.next() {
            return Ok(Box::new(ProcessTransport {
                program,
                args: parts.collect(),
            }));
        }
    }
    Err(TransportError::InvalidEndpoint(endpoint.to_owned()))
}

pub fn build_prompt(obs: &Observation, messages: &[Message], history: &HistoryBuffer, ctx: &PlanContext) -> String {
    let net = &ctx.net;
    let ranked = rank_critical_objects(obs, net);
    let mut s = String::new();
    let _ = writeln!(s, "### SCENE");
    s.push_str(&build_scene_description(obs, net, &ranked).0);
    let _ = writeln!(s, "\n### EGO");
    let _ = writeln!(s, "id: {}", obs.agent);
    let _ = writeln!(s, "tick: {}", obs.tick);
    let _ = writeln!(s, "position: {:.2},{:.2}", obs.ego.x, obs.ego.y);
    let _ = writeln!(s, "heading: {:.4}", obs.ego.alpha);
    let _ = writeln!(s, "steering: {:.4}", obs.ego.beta);
    let _ = writeln!(s, "speed: {:.2}", obs.speed);
    let _ = writeln!(s, "lane: {}", obs.lane);
    let _ = writeln!(s, "distance_to_merge: {:.2}", obs.distance_to_merge);
    let _ = writeln!(s, "on_ramp: {}", obs.on_ramp);
    match obs.maneuver_remaining {
        Some(r) => {
            let _ = writeln!(s, "lane_change_remaining: {r:.1}");
        }
        None => {
            let _ = writeln!(s, "lane_change_remaining: none");
        }
    }
    let _ = writeln!(s, "\n### NEIGHBORS");
    if obs.neighbors.is_empty() {
        let _ = writeln!(s, "none");
    }
    for n in &obs.neighbors {
        let lane = n.lane.map_or("none".to_string(), |l| l.to_string());
        let _ = writeln!(
            s,
            "id {} lane {lane} rel {:.2},{:.2} speed {:.2}",
            n.id, n.rel[0], n.rel[1], n.speed
        );
    }
    let _ = writeln!(s, "\n### MESSAGES");
    if messages.is_empty() {
        let _ = writeln!(s, "none");
    }
    for m in messages {
        let _ = writeln!(
            s,
            "from {} sent {} lane {} position {:.2},{:.2} speed {:.2} to_merge {:.2} commits {} toward lane {} for {:.1} s",
            m.sender,
            m.send_tick,
            m.lane,
            m.position[0],
            m.position[1],
            m.speed,
            m.distance_to_merge,
            m.committed,
            m.target_lane,
            m.window
        );
    }
    let _ = writeln!(s, "\n### HISTORY");
    if history.is_empty() {
        let _ = writeln!(s, "none");
    }
    for (o, a) in &history.entries {
        let _ = writeln!(s, "tick {} lane {} speed {:.2} action {a}", o.tick, o.lane, o.speed);
    }
    let _ = writeln!(s, "\n### INSTRUCTIONS");
    let _ = writeln!(s, "Think step by step:");
    let _ = writeln!(s, "1. Describe the road and where the ego vehicle is.");
    let _ = writeln!(s, "2. Identify the vehicles that matter most and their time to the merge point.");
    let _ = writeln!(s, "3. Use the messages to infer what the other vehicles will do.");
    let _ = writeln!(s, "4. Choose one meta-action: LEFT, RIGHT, IDLE, ACC or DEC.");
    let _ = writeln!(
        s,
        "5. Optionally give {} waypoints at {:.2} s spacing relative to the ego rear axle.",
        (ctx.horizon / ctx.dt).round() as usize + 1,
        ctx.dt
    );
    let _ = writeln!(s, "Answer format: line 1 the meta-action; line 2 the waypoints as x,y; pairs or empty; then your reasoning.");
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub meta_action: MetaAction,
    pub tokens: Option<TokenSequence>,
    pub rationale: String,
}

pub fn parse_response(text: &str) -> Result<ParsedResponse, ProtocolError> {
    let mut lines = text.lines();
    let first = lines.next().map(str::trim).filter(|l| !l.is_empty()).ok_or(ProtocolError::Empty)?;
    let meta_action = MetaAction::from_token(first).ok_or_else(|| ProtocolError::UnknownAction(first.to_owned()))?;
    let tokens = match lines.next().map(str::trim) {
        None | Some("") => None,
        Some(line) => Some(TokenSequence::from_text(line).map_err(|e| ProtocolError::Trajectory(e.to_string()))?),
    };
    let rationale = lines.collect::<Vec<_>>().join("\n");
    Ok(ParsedResponse {
        meta_action,
        tokens,
        rationale,
    })
}

fn fallback(obs: &Observation, messages: &[Message], history: &HistoryBuffer, ctx: &PlanContext, reason: String) -> Decision {
    let mut d = baseline_decide(obs, messages, history, ctx);
    d.fallback = true;
    d.fallback_reason = Some(match d.fallback_reason.take() {
        Some(inner) => format!("{reason}; {inner}"),
        None => reason,
    });
    d
}

fn decide_from_response(
    parsed: ParsedResponse,
    obs: &Observation,
    ctx: &PlanContext,
) -> Result<Decision, String> {
    let meta = parsed.meta_action;
    if meta.is_lane_change() {
        if let Some(reason) = lane_change_block(&ctx.net, meta, obs.lane, obs.ego.x, obs.speed, obs.maneuver_active()) {
            return Err(format!("illegal {meta}: {reason}"));
        }
    }
    let trajectory = match parsed.tokens {
        Some(tokens) => {
            let rel = detokenize_trajectory(&tokens).map_err(|e| e.to_string())?;
            let expected = (ctx.horizon / ctx.dt).round() as usize + 1;
            if rel.len() != expected {
                return Err(format!("expected {expected} waypoints, got {}", rel.len()));
            }
            if rel[0] != [0.0, 0.0] {
                return Err("first waypoint must be 0.00,0.00".into());
            }
            let t = Trajectory::from_relative(ctx.dt, obs.ego.position(), &rel);
            check_waypoints(meta, &t, &ctx.params).map_err(|e| e.to_string())?;
            t
        }
        None => {
            let spec = ctx.refine_spec(obs);
            let (planned, t, reason) =
                refine_with_fallback(meta, &obs.ego, &obs.control(), obs.lane, &ctx.net, &ctx.params, &spec)
                    .map_err(|e| e.to_string())?;
            if let Some(r) = reason {
                return Err(format!("{meta} could not be refined: {r} (planned {planned})"));
            }
            t
        }
    };
    let mut d = Decision::new(meta, trajectory);
    d.rationale = parsed.rationale;
    Ok(d)
}

pub fn external_decide(
    obs: &Observation,
    messages: &[Message],
    history: &HistoryBuffer,
    ctx: &PlanContext,
    transport: &mut dyn Transport,
    timeout: Duration,
) -> Decision {
    let prompt = build_prompt(obs, messages, history, ctx);
    let response = match transport.request(&prompt, timeout) {
        Ok(r) => r,
        Err(e) => return fallback(obs, messages, history, ctx, format!("transport: {e}")),
    };
    let parsed = match parse_response(&response) {
        Ok(p) => p,
        Err(e) => return fallback(obs, messages, history, ctx, format!("protocol: {e}")),
    };
    match decide_from_response(parsed, obs, ctx) {
        Ok(d) => d,
        Err(reason) => fallback(obs, messages, history, ctx, reason),
    }
}

pub struct ExternalPolicy {
    pub transport: Box<dyn Transport>,
    pub timeout: Duration,
}

impl Policy for ExternalPolicy {
    fn decide(&mut self, input: &DecisionInput<'_>) -> Decision {
        external_decide(
            input.obs,
            input.messages,
            input.history,
            input.ctx,
            self.transport.as_mut(),
            self.timeout,
        )
    }
}
