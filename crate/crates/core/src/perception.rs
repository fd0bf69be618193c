//! Scene understanding: patch arithmetic and the cross-attention alignment
//! kernel for visual features, plus critical-object ranking and the
//! structured text description of an observation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{classify_merge_condition, AgentId, MergeCondition, RoadNetwork};
use crate::simulation::{Neighbor, Observation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dimension mismatch: queries have {queries} columns, features {features}")]
    DimensionMismatch { queries: usize, features: usize },
    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix file line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Query embeddings share the feature layout.
pub type QueryMatrix = FeatureMatrix;

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, PerceptionError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(PerceptionError::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(PerceptionError::NonFinite {
                row: i / cols,
                col: i % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, PerceptionError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(PerceptionError::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self, PerceptionError> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, PerceptionError> {
        Self::new(self.rows, self.cols, self.data.iter().map(|v| v * factor).collect())
    }

    /// Parses the plain-text format: a header line `N D`, then N rows of D
    /// whitespace-separated numbers.
    pub fn parse(text: &str) -> Result<Self, PerceptionError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hl, header) = lines.next().ok_or(PerceptionError::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<Result<_, _>>()
            .map_err(|e| PerceptionError::Parse {
                line: hl,
                message: format!("bad header: {e}"),
            })?;
        let [n, d] = dims[..] else {
            return Err(PerceptionError::Parse {
                line: hl,
                message: "header must be `N D`".into(),
            });
        };
        let mut data = Vec::with_capacity(n * d);
        let mut count = 0;
        for (line, l) in lines {
            let row: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse())
                .collect::<Result<_, _>>()
                .map_err(|e| PerceptionError::Parse {
                    line,
                    message: format!("{e}"),
                })?;
            if row.len() != d {
                return Err(PerceptionError::Parse {
                    line,
                    message: format!("expected {d} values, found {}", row.len()),
                });
            }
            data.extend(row);
            count += 1;
        }
        if count != n {
            return Err(PerceptionError::Parse {
                line: hl,
                message: format!("header announces {n} rows, found {count}"),
            });
        }
        Self::new(n, d, data)
    }
}

/// Number of patches and flattened patch length for an image.
pub fn patchify(height: usize, width: usize, channels: usize, patch: usize) -> Result<(usize, usize), PerceptionError> {
    if patch == 0 || height == 0 || width == 0 || channels == 0 {
        return Err(PerceptionError::Shape("all dimensions must be positive".into()));
    }
    if !height.is_multiple_of(patch) || !width.is_multiple_of(patch) {
        return Err(PerceptionError::Shape(format!(
            "{height}x{width} image is not divisible into {patch}x{patch} patches"
        )));
    }
    Ok((height * width / (patch * patch), patch * patch * channels))
}

/// Numerically stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// `softmax(Q F^T / sqrt(D)) F`, row-wise.
pub fn cross_attention_align(q: &QueryMatrix, f: &FeatureMatrix) -> Result<FeatureMatrix, PerceptionError> {
    if q.cols != f.cols {
        return Err(PerceptionError::DimensionMismatch {
            queries: q.cols,
            features: f.cols,
        });
    }
    let scale = 1.0 / (f.cols as f64).sqrt();
    let mut out = Vec::with_capacity(q.rows * f.cols);
    for i in 0..q.rows {
        let qi = q.row(i);
        let scores: Vec<f64> = (0..f.rows)
            .map(|j| qi.iter().zip(f.row(j)).map(|(a, b)| a * b).sum::<f64>() * scale)
            .collect();
        let weights = softmax(&scores);
        for c in 0..f.cols {
            out.push((0..f.rows).map(|j| weights[j] * f.get(j, c)).sum());
        }
    }
    FeatureMatrix::new(q.rows, f.cols, out)
}

/// Seconds until the neighbour reaches the merge point at its current speed.
pub fn time_to_conflict(n: &Neighbor, obs: &Observation, net: &RoadNetwork) -> f64 {
    let remaining = net.merge_point_s - (obs.ego.x + n.rel[0]);
    if n.speed > 0.0 {
        remaining / n.speed
    } else {
        f64::INFINITY
    }
}

/// Neighbours that have not yet passed the merge point, most urgent first.
pub fn rank_critical_objects(obs: &Observation, net: &RoadNetwork) -> Vec<AgentId> {
    let mut scored: Vec<(f64, f64, AgentId)> = obs
        .neighbors
        .iter()
        .filter(|n| obs.ego.x + n.rel[0] <= net.merge_point_s)
        .map(|n| (time_to_conflict(n, obs, net), n.distance, n.id))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    scored.into_iter().map(|(_, _, id)| id).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneDescription(pub String);

impl std::fmt::Display for SceneDescription {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn lane_name(lane: usize, net: &RoadNetwork) -> String {
    if net.is_ramp_lane(lane) {
        format!("lane {lane} (ramp)")
    } else {
        format!("lane {lane} (main road)")
    }
}

fn relative_phrase(rel: [f64; 2]) -> String {
    let lon = if rel[0] >= 0.0 {
        format!("{:.2} m ahead", rel[0])
    } else {
        format!("{:.2} m behind", -rel[0])
    };
    let lat = if rel[1] > 0.0 {
        format!("{:.2} m to the left", rel[1])
    } else if rel[1] < 0.0 {
        format!("{:.2} m to the right", -rel[1])
    } else {
        "same lateral position".to_string()
    };
    format!("{lon}, {lat}")
}

pub fn build_scene_description(obs: &Observation, net: &RoadNetwork, ranked: &[AgentId]) -> SceneDescription {
    let mut s = String::new();
    let condition = match classify_merge_condition(net) {
        MergeCondition::Conflicting => "conflicting merge",
        MergeCondition::NonConflicting => "non-conflicting merge",
    };
    let _ = writeln!(
        s,
        "Road structure: straight main road with an on-ramp; {} + {} lanes merge into {} lanes ({condition}).",
        net.main_lanes, net.ramp_lanes, net.post_merge_lanes
    );
    let _ = writeln!(
        s,
        "Lane count: {} main-road lanes, {} ramp lanes.",
        net.main_lanes, net.ramp_lanes
    );
    let _ = writeln!(s, "Ego lane: {}.", lane_name(obs.lane, net));
    let _ = writeln!(
        s,
        "Ego state: position ({:.2}, {:.2}) m, speed {:.2} m/s, heading {:.3} rad.",
        obs.ego.x, obs.ego.y, obs.speed, obs.ego.alpha
    );
    if ranked.is_empty() {
        let _ = writeln!(s, "Critical objects: none.");
    } else {
        let _ = writeln!(s, "Critical objects:");
        for (rank, id) in ranked.iter().enumerate() {
            if let Some(n) = obs.neighbors.iter().find(|n| n.id == *id) {
                let lane = n.lane.map_or("off-lane".to_string(), |l| lane_name(l, net));
                let _ = writeln!(
                    s,
                    "  {}. vehicle {} in {lane}, {}, speed {:.2} m/s, {:.2} s to the merge point.",
                    rank + 1,
                    n.id,
                    relative_phrase(n.rel),
                    n.speed,
                    time_to_conflict(n, obs, net)
                );
            }
        }
    }
    let _ = writeln!(s, "Vehicles sensed: {}.", obs.neighbors.len());
    let d = obs.distance_to_merge;
    let zone = net.merge_zone_start - obs.ego.x;
    let merge = if d < 0.0 {
        format!("Merge zone: merge point passed {:.2} m ago.", -d)
    } else if zone > 0.0 {
        format!("Merge zone: starts in {zone:.2} m; merge point in {d:.2} m.")
    } else {
        format!("Merge zone: inside; merge point in {d:.2} m.")
    };
    let _ = writeln!(s, "{merge}");
    SceneDescription(s)
}
