//! Driving-quality scores and open-loop error measures.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speeds above this count as a speed violation (m/s).
pub const SPEED_LIMIT: f64 = 11.11;
/// Default TTC threshold `t_t` (s).
pub const TTC_THRESHOLD: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("reference speed v0 = {0} must be positive")]
    NonPositiveReference(f64),
    #[error("TTC threshold must be positive, got {0}")]
    NonPositiveThreshold(f64),
    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreWeights {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    /// Per-collision penalty factor.
    pub alpha_pen: f64,
    /// Per-speed-violation penalty factor.
    pub beta_pen: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            k1: 0.25,
            k2: 0.25,
            k3: 0.5,
            alpha_pen: 0.6,
            beta_pen: 0.9,
        }
    }
}

impl ScoreWeights {
    pub fn validate(&self) -> Result<(), MetricError> {
        let ks = [self.k1, self.k2, self.k3];
        if ks.iter().any(|k| !(*k >= 0.0)) || ((self.k1 + self.k2 + self.k3) - 1.0).abs() > 1e-9 {
            return Err(MetricError::InvalidWeights(format!(
                "k1 + k2 + k3 must equal 1 with each k >= 0, got {ks:?}"
            )));
        }
        for (name, v) in [("alpha_pen", self.alpha_pen), ("beta_pen", self.beta_pen)] {
            if !(0.0..1.0).contains(&v) {
                return Err(MetricError::InvalidWeights(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComfortLimits {
    pub accel_lon: f64,
    pub accel_lat: f64,
    pub jerk_lon: f64,
    pub jerk_lat: f64,
}

impl Default for ComfortLimits {
    fn default() -> Self {
        Self {
            accel_lon: 3.0,
            accel_lat: 3.0,
            jerk_lon: 2.0,
            jerk_lat: 2.0,
        }
    }
}

/// Longitudinal/lateral acceleration and jerk at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ComfortSample {
    pub accel_lon: f64,
    pub accel_lat: f64,
    pub jerk_lon: f64,
    pub jerk_lat: f64,
}

pub fn efficiency_score(v_ego: f64, v_avg: f64, v_lmt: f64, sigma: f64) -> Result<f64, MetricError> {
    let v0 = v_avg.min(v_lmt) + sigma;
    if !(v0 > 0.0) {
        return Err(MetricError::NonPositiveReference(v0));
    }
    Ok(if v_ego >= v0 { 1.0 } else { (v_ego / v0).max(0.0) })
}

fn sub_score(peak: f64, limit: f64) -> f64 {
    if peak <= limit {
        1.0
    } else {
        limit / peak
    }
}

/// Mean of the four peak-based sub-scores. An empty sample set scores 1.
pub fn comfort_score(samples: &[ComfortSample], limits: &ComfortLimits) -> f64 {
    let peak = |f: fn(&ComfortSample) -> f64| samples.iter().map(|s| f(s).abs()).fold(0.0, f64::max);
    let scores = [
        sub_score(peak(|s| s.accel_lon), limits.accel_lon),
        sub_score(peak(|s| s.accel_lat), limits.accel_lat),
        sub_score(peak(|s| s.jerk_lon), limits.jerk_lon),
        sub_score(peak(|s| s.jerk_lat), limits.jerk_lat),
    ];
    scores.iter().sum::<f64>() / 4.0
}

/// Acceleration and jerk along a uniformly sampled path, by central
/// differences, resolved into the local direction of travel. One sample per
/// index that has two neighbours on each side.
pub fn path_comfort_samples(path: &[[f64; 2]], dt: f64) -> Vec<ComfortSample> {
    if path.len() < 5 {
        return Vec::new();
    }
    let d = |i: usize, k: usize| path[i][k];
    (2..path.len() - 2)
        .map(|i| {
            let mut v = [0.0; 2];
            let mut a = [0.0; 2];
            let mut j = [0.0; 2];
            for k in 0..2 {
                v[k] = (d(i + 1, k) - d(i - 1, k)) / (2.0 * dt);
                a[k] = (d(i + 1, k) - 2.0 * d(i, k) + d(i - 1, k)) / (dt * dt);
                j[k] = (d(i + 2, k) - 2.0 * d(i + 1, k) + 2.0 * d(i - 1, k) - d(i - 2, k))
                    / (2.0 * dt * dt * dt);
            }
            let speed = v[0].hypot(v[1]);
            let (c, s) = if speed > 1e-9 {
                (v[0] / speed, v[1] / speed)
            } else {
                (1.0, 0.0)
            };
            ComfortSample {
                accel_lon: a[0] * c + a[1] * s,
                accel_lat: -a[0] * s + a[1] * c,
                jerk_lon: j[0] * c + j[1] * s,
                jerk_lat: -j[0] * s + j[1] * c,
            }
        })
        .collect()
}

/// Time to collision; infinite when the gap is not closing.
pub fn ttc(d: f64, v_ego: f64, v_lead: f64) -> f64 {
    if v_ego > v_lead {
        d.max(0.0) / (v_ego - v_lead)
    } else {
        f64::INFINITY
    }
}

pub fn safety_score(t_ego: f64, t_t: f64) -> Result<f64, MetricError> {
    if !(t_t > 0.0) {
        return Err(MetricError::NonPositiveThreshold(t_t));
    }
    Ok(if t_ego >= t_t { 1.0 } else { (t_ego / t_t).max(0.0) })
}

/// Penalized weighted score; `lambda1` counts collisions, `lambda2` speed violations.
pub fn driving_score(cs: f64, es: f64, ss: f64, w: &ScoreWeights, lambda1: u32, lambda2: u32) -> f64 {
    let base = w.k1 * cs + w.k2 * es + w.k3 * ss;
    w.alpha_pen.powi(lambda1 as i32) * w.beta_pen.powi(lambda2 as i32) * base
}

/// Mean Euclidean distance over all N scenarios x K waypoints.
pub fn l2_error(pred: &[Vec<[f64; 2]>], truth: &[Vec<[f64; 2]>]) -> Result<f64, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::ShapeMismatch(format!(
            "{} predicted scenarios vs {} ground-truth",
            pred.len(),
            truth.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (n, (p, t)) in pred.iter().zip(truth).enumerate() {
        if p.len() != t.len() {
            return Err(MetricError::ShapeMismatch(format!(
                "scenario {n}: {} predicted waypoints vs {}",
                p.len(),
                t.len()
            )));
        }
        for (a, b) in p.iter().zip(t) {
            total += (a[0] - b[0]).hypot(a[1] - b[1]);
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricError::EmptyInput);
    }
    Ok(total / count as f64)
}

pub fn collision_rate(counts: &[u32], horizon: f64) -> Result<f64, MetricError> {
    if !(horizon > 0.0) {
        return Err(MetricError::NonPositiveHorizon(horizon));
    }
    if counts.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let sum: f64 = counts.iter().map(|&c| c as f64 / horizon).sum();
    Ok(sum / counts.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::ShapeMismatch(format!(
            "{} predictions vs {} ground-truth values",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}
