//! Open-loop prediction scoring on recorded tracks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dataset::{TrajectoryDataset, TrajectoryPair, DATASET_HZ, FUTURE_FRAMES};
use crate::dynamics::VehicleParams;
use crate::geometry::{intersection_area, OrientedBox};
use crate::metrics::{collision_rate, l2_error, rmse, MetricError};
use crate::planning::external::Transport;
use crate::planning::{detokenize_trajectory, tokenize_trajectory, TokenSequence};

/// Horizons (s) of the L2 columns.
pub const L2_HORIZONS: [usize; 3] = [1, 2, 3];
/// Horizons (s) of the RMSE columns.
pub const RMSE_HORIZONS: [usize; 4] = [1, 2, 3, 4];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("pair {pair}: predictor returned {got} points, expected {expected}")]
    Length { pair: usize, got: usize, expected: usize },
    #[error("pair {pair}: predictor failed: {msg}")]
    Predictor { pair: usize, msg: String },
    #[error("dataset has no pairs")]
    Empty,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub trait Predictor {
    fn name(&self) -> &str;
    /// Positions for the `FUTURE_FRAMES` frames after the past window.
    fn predict(&mut self, pair: &TrajectoryPair) -> Result<Vec<[f64; 2]>, String>;
}

/// Returns the recorded future.
pub struct EchoPredictor;

impl Predictor for EchoPredictor {
    fn name(&self) -> &str {
        "echo"
    }

    fn predict(&mut self, pair: &TrajectoryPair) -> Result<Vec<[f64; 2]>, String> {
        Ok(pair.future.clone())
    }
}

/// Extrapolates the last recorded velocity.
pub struct ConstVelPredictor;

impl Predictor for ConstVelPredictor {
    fn name(&self) -> &str {
        "const-vel"
    }

    fn predict(&mut self, pair: &TrajectoryPair) -> Result<Vec<[f64; 2]>, String> {
        let last = pair.past.last().ok_or("empty past")?;
        let dt = 1.0 / DATASET_HZ;
        Ok((1..=FUTURE_FRAMES)
            .map(|k| {
                let t = k as f64 * dt;
                [last.x + last.vx * t, last.y + last.vy * t]
            })
            .collect())
    }
}

/// Asks the external reasoner; positions travel as tokens relative to the
/// last past position.
pub struct ExternalPredictor {
    pub transport: Box<dyn Transport>,
    pub timeout: Duration,
}

pub fn prediction_prompt(pair: &TrajectoryPair) -> Result<String, String> {
    let last = pair.past.last().ok_or("empty past")?;
    let rel: Vec<[f64; 2]> = pair.past.iter().map(|r| [r.x - last.x, r.y - last.y]).collect();
    let tokens = tokenize_trajectory(&rel).map_err(|e| e.to_string())?;
    let mut s = String::new();
    let _ = writeln!(s, "### PAST");
    let _ = writeln!(s, "{tokens}");
    let _ = writeln!(s, "### VELOCITY");
    let _ = writeln!(s, "{:.2},{:.2}", last.vx, last.vy);
    let _ = writeln!(s, "### INSTRUCTIONS");
    let _ = writeln!(
        s,
        "Positions are in metres relative to the last past position, one every {:.1} s. Answer with one line of {} future positions in the same format.",
        1.0 / DATASET_HZ,
        FUTURE_FRAMES
    );
    Ok(s)
}

impl Predictor for ExternalPredictor {
    fn name(&self) -> &str {
        "external"
    }

    fn predict(&mut self, pair: &TrajectoryPair) -> Result<Vec<[f64; 2]>, String> {
        let prompt = prediction_prompt(pair)?;
        let reply = self.transport.request(&prompt, self.timeout).map_err(|e| e.to_string())?;
        let line = reply.lines().find(|l| !l.trim().is_empty()).ok_or("empty reply")?;
        let tokens = TokenSequence::from_text(line.trim()).map_err(|e| e.to_string())?;
        let rel = detokenize_trajectory(&tokens).map_err(|e| e.to_string())?;
        let last = pair.past.last().ok_or("empty past")?;
        Ok(rel.iter().map(|p| [p[0] + last.x, p[1] + last.y]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopReport {
    pub predictor: String,
    pub pairs: usize,
    /// Mean displacement over the frames up to 1, 2 and 3 s.
    pub l2: [f64; 3],
    pub l2_avg: f64,
    /// Displacement RMSE over the frames up to 1, 2, 3 and 4 s.
    pub rmse: [f64; 4],
    pub rmse_avg: f64,
    /// Pairs whose prediction overlaps another recorded vehicle.
    pub collisions: u32,
    pub collision_rate: f64,
}

impl OpenLoopReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| predictor | L2 1s | L2 2s | L2 3s | L2 avg | RMSE 1s | RMSE 2s | RMSE 3s | RMSE 4s | RMSE avg | collision % |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|---|---|");
        let _ = writeln!(
            s,
            "| {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.2} |",
            self.predictor,
            self.l2[0],
            self.l2[1],
            self.l2[2],
            self.l2_avg,
            self.rmse[0],
            self.rmse[1],
            self.rmse[2],
            self.rmse[3],
            self.rmse_avg,
            100.0 * self.collision_rate
        );
        s
    }
}

fn frames(h: usize) -> usize {
    (h as f64 * DATASET_HZ).round() as usize
}

pub fn evaluate_open_loop(ds: &TrajectoryDataset, predictor: &mut dyn Predictor) -> Result<OpenLoopReport, EvalError> {
    if ds.pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut preds = Vec::with_capacity(ds.pairs.len());
    for (i, pair) in ds.pairs.iter().enumerate() {
        let p = predictor
            .predict(pair)
            .map_err(|msg| EvalError::Predictor { pair: i, msg })?;
        if p.len() != FUTURE_FRAMES {
            return Err(EvalError::Length {
                pair: i,
                got: p.len(),
                expected: FUTURE_FRAMES,
            });
        }
        preds.push(p);
    }
    let truth: Vec<Vec<[f64; 2]>> = ds.pairs.iter().map(|p| p.future.clone()).collect();
    let cut = |v: &[Vec<[f64; 2]>], n: usize| -> Vec<Vec<[f64; 2]>> { v.iter().map(|t| t[..n].to_vec()).collect() };

    let mut l2 = [0.0; 3];
    for (slot, h) in l2.iter_mut().zip(L2_HORIZONS) {
        *slot = l2_error(&cut(&preds, frames(h)), &cut(&truth, frames(h)))?;
    }
    let mut out_rmse = [0.0; 4];
    for (slot, h) in out_rmse.iter_mut().zip(RMSE_HORIZONS) {
        let n = frames(h);
        let errors: Vec<f64> = preds
            .iter()
            .zip(&truth)
            .flat_map(|(p, t)| p[..n].iter().zip(&t[..n]).map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1])))
            .collect();
        *slot = rmse(&errors, &vec![0.0; errors.len()])?;
    }

    let by_frame = index_frames(ds);
    let params = VehicleParams::default();
    let mut counts = Vec::with_capacity(preds.len());
    for (pair, pred) in ds.pairs.iter().zip(&preds) {
        counts.push(u32::from(prediction_collides(pair, pred, &by_frame, &params)));
    }
    Ok(OpenLoopReport {
        predictor: predictor.name().to_owned(),
        pairs: ds.pairs.len(),
        l2,
        l2_avg: l2.iter().sum::<f64>() / l2.len() as f64,
        rmse: out_rmse,
        rmse_avg: out_rmse.iter().sum::<f64>() / out_rmse.len() as f64,
        collisions: counts.iter().sum(),
        collision_rate: collision_rate(&counts, 1.0)?,
    })
}

type FrameIndex = BTreeMap<i64, Vec<(u64, [f64; 4])>>;

fn index_frames(ds: &TrajectoryDataset) -> FrameIndex {
    let mut idx: FrameIndex = BTreeMap::new();
    for r in &ds.records {
        idx.entry(r.frame).or_default().push((r.id, [r.x, r.y, r.vx, r.vy]));
    }
    idx
}

fn heading(vx: f64, vy: f64) -> f64 {
    if vx.hypot(vy) > 1e-6 {
        vy.atan2(vx)
    } else {
        0.0
    }
}

fn prediction_collides(pair: &TrajectoryPair, pred: &[[f64; 2]], idx: &FrameIndex, params: &VehicleParams) -> bool {
    let first = pair.start_frame + pair.past.len() as i64;
    let last = pair.past.last().map_or([0.0, 0.0], |r| [r.x, r.y]);
    let mut prev = last;
    for (k, p) in pred.iter().enumerate() {
        let h = heading(p[0] - prev[0], p[1] - prev[1]);
        prev = *p;
        let ego = OrientedBox::new(*p, h, params.length, params.width);
        let Some(others) = idx.get(&(first + k as i64)) else {
            continue;
        };
        for (id, o) in others {
            if *id == pair.vehicle {
                continue;
            }
            let other = OrientedBox::new([o[0], o[1]], heading(o[2], o[3]), params.length, params.width);
            if intersection_area(&ego, &other).is_ok_and(|a| a > 0.0) {
                return true;
            }
        }
    }
    false
}
