//! Straight multi-lane road with a parallel on-ramp.
//!
//! Lanes are indexed from the leftmost main lane (0) rightwards; ramp lanes
//! follow the main lanes. The road runs along +x and lane `i` is centred at
//! `y = -(i + 0.5) * lane_width`. Ramp lanes whose index is at least
//! `post_merge_lanes` end at the merge point.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{VehicleParams, VehicleState};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("merge condition is non-conflicting ({main} main + {ramp} ramp <= {post} lanes after the merge); only conflicting merges are simulated")]
    NonConflicting { main: usize, ramp: usize, post: usize },
    #[error("spawns {a} and {b} overlap in lane {lane}")]
    OverlappingSpawns { a: usize, b: usize, lane: usize },
    #[error("position ({x:.3}, {y:.3}) is not on any lane")]
    OffRoad { x: f64, y: f64 },
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl std::fmt::Display for AgentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MergeCondition {
    Conflicting,
    NonConflicting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LaneKind {
    Main,
    Ramp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub index: usize,
    pub kind: LaneKind,
    /// Polyline of the lane centre, ordered by increasing station.
    pub centerline: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub main_lanes: usize,
    pub ramp_lanes: usize,
    pub post_merge_lanes: usize,
    pub lane_width: f64,
    pub road_length: f64,
    pub merge_point_s: f64,
    /// Closed station interval on the ramp where messaging is enabled.
    pub collab_area: (f64, f64),
    /// Ramp vehicles may change into the main road from this station on.
    pub merge_zone_start: f64,
    pub lanes: Vec<Lane>,
}

pub fn classify_merge_condition(net: &RoadNetwork) -> MergeCondition {
    classify_lane_counts(net.main_lanes, net.ramp_lanes, net.post_merge_lanes)
}

pub fn classify_lane_counts(main: usize, ramp: usize, post: usize) -> MergeCondition {
    if main + ramp > post {
        MergeCondition::Conflicting
    } else {
        MergeCondition::NonConflicting
    }
}

impl RoadNetwork {
    pub fn lane_count(&self) -> usize {
        self.main_lanes + self.ramp_lanes
    }

    pub fn is_ramp_lane(&self, lane: usize) -> bool {
        lane >= self.main_lanes
    }

    pub fn lane_center(&self, lane: usize) -> f64 {
        -(lane as f64 + 0.5) * self.lane_width
    }

    /// Station at which `lane` stops being drivable.
    pub fn lane_end(&self, lane: usize) -> f64 {
        if lane < self.post_merge_lanes {
            self.road_length
        } else {
            self.merge_point_s
        }
    }

    /// Lane containing the point, if any.
    pub fn lane_at(&self, x: f64, y: f64) -> Option<usize> {
        if !(x.is_finite() && y.is_finite()) || x < 0.0 || y > 0.0 {
            return None;
        }
        let idx = (-y / self.lane_width).floor();
        if idx < 0.0 || idx >= self.lane_count() as f64 {
            return None;
        }
        let lane = idx as usize;
        if x > self.lane_end(lane) {
            return None;
        }
        Some(lane)
    }

    /// Arc-length station of a point; lanes are straight so this is `x`.
    pub fn station(&self, x: f64, y: f64) -> Result<f64, ScenarioError> {
        self.lane_at(x, y)
            .map(|_| x)
            .ok_or(ScenarioError::OffRoad { x, y })
    }

    pub fn in_merge_zone(&self, station: f64) -> bool {
        station >= self.merge_zone_start && station <= self.merge_point_s
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.main_lanes == 0 || self.ramp_lanes == 0 || self.post_merge_lanes == 0 {
            return Err(ScenarioError::Invalid("all lane counts must be at least 1".into()));
        }
        if self.post_merge_lanes < self.main_lanes {
            return Err(ScenarioError::Invalid(format!(
                "post_merge_lanes ({}) cannot be fewer than main_lanes ({})",
                self.post_merge_lanes, self.main_lanes
            )));
        }
        if !(self.lane_width > 0.0) {
            return Err(ScenarioError::Invalid("lane_width must be positive".into()));
        }
        let (s0, s1) = self.collab_area;
        if !(s0 >= 0.0 && s0 < s1 && s1 <= self.merge_point_s) {
            return Err(ScenarioError::Invalid(format!(
                "collaborative area [{s0}, {s1}] must satisfy 0 <= start < end <= merge point {}",
                self.merge_point_s
            )));
        }
        if !(self.merge_zone_start >= 0.0 && self.merge_zone_start < self.merge_point_s) {
            return Err(ScenarioError::Invalid("merge zone must start before the merge point".into()));
        }
        if !(self.merge_point_s < self.road_length) {
            return Err(ScenarioError::Invalid("merge point must lie before the road end".into()));
        }
        for lane in &self.lanes {
            if lane.centerline.len() < 2
                || lane.centerline.windows(2).any(|w| !(w[1][0] > w[0][0]))
            {
                return Err(ScenarioError::Invalid(format!(
                    "centerline of lane {} is not strictly monotone",
                    lane.index
                )));
            }
        }
        Ok(())
    }
}

/// Whether the vehicle's station lies in the closed collaborative interval.
pub fn in_collaborative_area(state: &VehicleState, net: &RoadNetwork) -> Result<bool, ScenarioError> {
    let s = net.station(state.x, state.y)?;
    Ok(s >= net.collab_area.0 && s <= net.collab_area.1)
}

/// A lane change committed at `s_start` and settled by `s_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneTransition {
    pub s_start: f64,
    pub s_end: f64,
    pub from_lane: usize,
    pub to_lane: usize,
}

/// Planned lane sequence of one vehicle plus the transitions realized so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub lanes: Vec<usize>,
    pub transitions: Vec<LaneTransition>,
}

/// Points sampled along a route centreline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledCenterline(pub Vec<[f64; 2]>);

fn smoothstep5(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

impl Route {
    /// Route from a spawn lane: main-road vehicles keep their lane, ramp
    /// vehicles step left until they reach a lane that survives the merge.
    pub fn for_spawn(lane: usize, net: &RoadNetwork) -> Self {
        let mut lanes = vec![lane];
        if net.is_ramp_lane(lane) {
            let target = net.main_lanes - 1;
            let mut l = lane;
            while l > target && l >= net.post_merge_lanes {
                l -= 1;
                lanes.push(l);
            }
            if *lanes.last().unwrap() != target && lanes.len() == 1 {
                // Ramp lane that continues past the merge point.
                lanes.push(target);
            }
        }
        Self {
            lanes,
            transitions: Vec::new(),
        }
    }

    pub fn is_ramp_route(&self, net: &RoadNetwork) -> bool {
        net.is_ramp_lane(self.lanes[0])
    }

    pub fn final_lane(&self) -> usize {
        *self.lanes.last().unwrap()
    }

    pub fn push_transition(&mut self, t: LaneTransition) {
        if !self.lanes.contains(&t.to_lane) {
            self.lanes.push(t.to_lane);
        }
        self.transitions.push(t);
    }

    /// Lateral reference at a station: the spawn-lane centre, blended through
    /// each committed transition.
    pub fn lateral_reference(&self, s: f64, net: &RoadNetwork) -> f64 {
        let mut y = net.lane_center(self.lanes[0]);
        for t in &self.transitions {
            if s <= t.s_start {
                break;
            }
            let from = net.lane_center(t.from_lane);
            let to = net.lane_center(t.to_lane);
            let span = (t.s_end - t.s_start).max(1e-9);
            y = from + (to - from) * smoothstep5((s - t.s_start) / span);
        }
        y
    }

    /// `n` points uniformly spaced in arc length over stations `[s_from, s_to]`.
    pub fn sample_centerline(&self, net: &RoadNetwork, s_from: f64, s_to: f64, n: usize) -> SampledCenterline {
        let n = n.max(2);
        let bends = self
            .transitions
            .iter()
            .any(|t| t.s_end > s_from.min(s_to) && t.s_start < s_from.max(s_to));
        if !bends {
            let y = self.lateral_reference(s_from, net);
            return SampledCenterline(
                (0..n)
                    .map(|i| [s_from + (s_to - s_from) * i as f64 / (n - 1) as f64, y])
                    .collect(),
            );
        }
        let dense_n = 20 * n;
        let dense: Vec<[f64; 2]> = (0..=dense_n)
            .map(|i| {
                let s = s_from + (s_to - s_from) * i as f64 / dense_n as f64;
                [s, self.lateral_reference(s, net)]
            })
            .collect();
        let mut cumulative = Vec::with_capacity(dense.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in dense.windows(2) {
            acc += (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            cumulative.push(acc);
        }
        let total = acc;
        let mut out = Vec::with_capacity(n);
        let mut j = 0;
        for i in 0..n {
            let target = total * i as f64 / (n - 1) as f64;
            while j + 1 < cumulative.len() - 1 && cumulative[j + 1] < target {
                j += 1;
            }
            let seg = cumulative[j + 1] - cumulative[j];
            let f = if seg > 0.0 {
                ((target - cumulative[j]) / seg).clamp(0.0, 1.0)
            } else {
                0.0
            };
            out.push([
                dense[j][0] + f * (dense[j + 1][0] - dense[j][0]),
                dense[j][1] + f * (dense[j + 1][1] - dense[j][1]),
            ]);
        }
        SampledCenterline(out)
    }
}

pub fn nearest_centerline_distance(point: [f64; 2], centerline: &SampledCenterline) -> f64 {
    centerline
        .0
        .iter()
        .map(|p| (p[0] - point[0]).powi(2) + (p[1] - point[1]).powi(2))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpawnSpec {
    pub lane: usize,
    pub station: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub main_lanes: usize,
    pub ramp_lanes: usize,
    pub post_merge_lanes: usize,
    pub lane_width: f64,
    pub road_length: f64,
    pub merge_point: f64,
    /// Length of the collaborative area, which ends at the merge point.
    pub collab_length: f64,
    pub merge_zone_length: f64,
    pub centerline_samples: usize,
    /// Uniform spawn jitter half-widths drawn from the spawn stream.
    pub spawn_jitter_station: f64,
    pub spawn_jitter_speed: f64,
    pub spawns: Vec<SpawnSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let spawn = |lane, station, speed| SpawnSpec { lane, station, speed };
        Self {
            main_lanes: 3,
            ramp_lanes: 1,
            post_merge_lanes: 3,
            lane_width: 3.5,
            road_length: 1000.0,
            merge_point: 200.0,
            collab_length: 80.0,
            merge_zone_length: 80.0,
            centerline_samples: 50,
            spawn_jitter_station: 2.0,
            spawn_jitter_speed: 0.3,
            spawns: vec![
                spawn(0, 30.0, 10.0),
                spawn(0, 90.0, 10.0),
                spawn(1, 20.0, 10.0),
                spawn(1, 80.0, 10.0),
                spawn(2, 10.0, 10.0),
                spawn(2, 60.0, 10.0),
                spawn(2, 110.0, 10.0),
                spawn(3, 45.0, 9.0),
                spawn(3, 10.0, 9.0),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spawn {
    pub id: AgentId,
    pub lane: usize,
    pub station: f64,
    pub speed: f64,
}

impl ScenarioConfig {
    pub fn network(&self) -> Result<RoadNetwork, ScenarioError> {
        let total = self.main_lanes + self.ramp_lanes;
        let mut net = RoadNetwork {
            main_lanes: self.main_lanes,
            ramp_lanes: self.ramp_lanes,
            post_merge_lanes: self.post_merge_lanes,
            lane_width: self.lane_width,
            road_length: self.road_length,
            merge_point_s: self.merge_point,
            collab_area: (self.merge_point - self.collab_length, self.merge_point),
            merge_zone_start: self.merge_point - self.merge_zone_length,
            lanes: Vec::with_capacity(total),
        };
        for index in 0..total {
            let y = net.lane_center(index);
            let end = net.lane_end(index);
            net.lanes.push(Lane {
                index,
                kind: if index < self.main_lanes {
                    LaneKind::Main
                } else {
                    LaneKind::Ramp
                },
                centerline: vec![[0.0, y], [end, y]],
            });
        }
        net.validate()?;
        Ok(net)
    }
}

/// Builds the road and the seeded initial placements.
pub fn build_scenario(
    cfg: &ScenarioConfig,
    params: &VehicleParams,
    seed: u64,
) -> Result<(RoadNetwork, Vec<Spawn>), ScenarioError> {
    let net = cfg.network()?;
    if classify_merge_condition(&net) == MergeCondition::NonConflicting {
        return Err(ScenarioError::NonConflicting {
            main: net.main_lanes,
            ramp: net.ramp_lanes,
            post: net.post_merge_lanes,
        });
    }
    if cfg.centerline_samples < 2 {
        return Err(ScenarioError::Invalid("centerline_samples must be at least 2".into()));
    }
    if !(cfg.spawn_jitter_station >= 0.0 && cfg.spawn_jitter_speed >= 0.0) {
        return Err(ScenarioError::Invalid("spawn jitter must be non-negative".into()));
    }
    let min_separation = params.length + 2.0 * cfg.spawn_jitter_station;
    for (i, a) in cfg.spawns.iter().enumerate() {
        if a.lane >= net.lane_count() {
            return Err(ScenarioError::Invalid(format!(
                "spawn {i} references lane {} but the road has {} lanes",
                a.lane,
                net.lane_count()
            )));
        }
        if !(a.station >= 0.0 && a.station <= net.lane_end(a.lane)) {
            return Err(ScenarioError::Invalid(format!(
                "spawn {i} station {} is outside lane {}",
                a.station, a.lane
            )));
        }
        if !(a.speed >= 0.0 && a.speed <= params.u_max) {
            return Err(ScenarioError::Invalid(format!(
                "spawn {i} speed {} is outside [0, u_max]",
                a.speed
            )));
        }
        for (j, b) in cfg.spawns.iter().enumerate().skip(i + 1) {
            if a.lane == b.lane && (a.station - b.station).abs() < min_separation {
                return Err(ScenarioError::OverlappingSpawns { a: i, b: j, lane: a.lane });
            }
        }
    }
    let mut stream = rng::substream(seed, rng::SPAWN_STREAM, &[]);
    let spawns = cfg
        .spawns
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let ds = jitter(&mut stream, cfg.spawn_jitter_station);
            let dv = jitter(&mut stream, cfg.spawn_jitter_speed);
            Spawn {
                id: AgentId(i as u32),
                lane: s.lane,
                station: (s.station + ds).clamp(0.0, net.lane_end(s.lane)),
                speed: (s.speed + dv).clamp(0.0, params.u_max),
            }
        })
        .collect();
    Ok((net, spawns))
}

fn jitter<R: Rng>(rng: &mut R, half_width: f64) -> f64 {
    let u: f64 = rng.random();
    (2.0 * u - 1.0) * half_width
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net_with(main: usize, ramp: usize, post: usize) -> RoadNetwork {
        ScenarioConfig {
            main_lanes: main,
            ramp_lanes: ramp,
            post_merge_lanes: post,
            ..ScenarioConfig::default()
        }
        .network()
        .unwrap()
    }

    #[test]
    fn merge_condition_examples() {
        assert_eq!(classify_merge_condition(&net_with(3, 1, 3)), MergeCondition::Conflicting);
        assert_eq!(classify_merge_condition(&net_with(2, 1, 3)), MergeCondition::NonConflicting);
        assert_eq!(classify_merge_condition(&net_with(3, 2, 4)), MergeCondition::Conflicting);
    }

    #[test]
    fn adding_a_lane_flips_condition() {
        for main in 1..5 {
            for ramp in 1..3 {
                let post = main + ramp - 1;
                assert_eq!(classify_lane_counts(main, ramp, post), MergeCondition::Conflicting);
                assert_eq!(classify_lane_counts(main, ramp, post + 1), MergeCondition::NonConflicting);
            }
        }
    }

    #[test]
    fn collaborative_area_membership() {
        let net = net_with(3, 1, 3);
        let y = net.lane_center(3);
        let (s0, s1) = net.collab_area;
        let at = |x| in_collaborative_area(&VehicleState::new(x, y, 0.0, 0.0), &net).unwrap();
        assert!(at((s0 + s1) / 2.0));
        assert!(at(s0));
        assert!(at(s1));
        assert!(!at(s0 - 0.01));
        assert!(matches!(
            in_collaborative_area(&VehicleState::new(s1 + 1.0, y, 0.0, 0.0), &net),
            Err(ScenarioError::OffRoad { .. })
        ));
        // Off the road entirely.
        assert!(in_collaborative_area(&VehicleState::new(s0, 5.0, 0.0, 0.0), &net).is_err());
    }

    #[test]
    fn station_past_area_on_main_is_outside() {
        let net = net_with(3, 1, 3);
        let y = net.lane_center(2);
        let s = VehicleState::new(net.collab_area.1 + 1.0, y, 0.0, 0.0);
        assert!(!in_collaborative_area(&s, &net).unwrap());
    }

    #[test]
    fn lane_mapping() {
        let net = net_with(3, 1, 3);
        assert_eq!(net.lane_at(10.0, -1.0), Some(0));
        assert_eq!(net.lane_at(10.0, -12.0), Some(3));
        assert_eq!(net.lane_at(250.0, -12.0), None);
        assert_eq!(net.lane_at(250.0, -9.0), Some(2));
        assert_eq!(net.lane_at(10.0, 0.5), None);
        assert_eq!(net.lane_at(-1.0, -1.0), None);
    }

    #[test]
    fn centerline_distance_examples() {
        let net = net_with(3, 1, 3);
        let route = Route {
            lanes: vec![0],
            transitions: vec![],
        };
        let c = route.sample_centerline(&net, 0.0, 49.0, 50);
        let y0 = net.lane_center(0);
        assert_eq!(nearest_centerline_distance(c.0[7], &c), 0.0);
        assert!((nearest_centerline_distance([5.0, y0 + 1.0], &c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn samples_are_uniform_in_arc_length() {
        let net = net_with(3, 1, 3);
        let mut route = Route::for_spawn(3, &net);
        route.push_transition(LaneTransition {
            s_start: 10.0,
            s_end: 40.0,
            from_lane: 3,
            to_lane: 2,
        });
        let c = route.sample_centerline(&net, 0.0, 60.0, 50);
        assert_eq!(c.0.len(), 50);
        let gaps: Vec<f64> = c
            .0
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!(gaps.iter().all(|g| (g - mean).abs() < 1e-3 * mean), "{gaps:?}");
        assert_eq!(c.0[0], [0.0, net.lane_center(3)]);
        assert!((c.0[49][1] - net.lane_center(2)).abs() < 1e-12);
    }

    #[test]
    fn ramp_route_lanes() {
        let net = net_with(3, 1, 3);
        assert_eq!(Route::for_spawn(3, &net).lanes, vec![3, 2]);
        assert_eq!(Route::for_spawn(1, &net).lanes, vec![1]);
        let net = net_with(3, 2, 4);
        assert_eq!(Route::for_spawn(4, &net).lanes, vec![4, 3]);
        assert_eq!(Route::for_spawn(3, &net).lanes, vec![3, 2]);
    }

    #[test]
    fn build_default_scenario() {
        let p = VehicleParams::default();
        let cfg = ScenarioConfig::default();
        let (net, spawns) = build_scenario(&cfg, &p, 1).unwrap();
        assert_eq!((net.main_lanes, net.ramp_lanes), (3, 1));
        assert_eq!(spawns.len(), cfg.spawns.len());
        let (_, again) = build_scenario(&cfg, &p, 1).unwrap();
        assert_eq!(spawns, again);
        let (_, other) = build_scenario(&cfg, &p, 2).unwrap();
        assert_ne!(spawns, other);
    }

    #[test]
    fn duplicate_spawn_rejected() {
        let cfg = ScenarioConfig {
            spawns: vec![
                SpawnSpec { lane: 1, station: 50.0, speed: 10.0 },
                SpawnSpec { lane: 1, station: 50.0, speed: 10.0 },
            ],
            ..ScenarioConfig::default()
        };
        assert!(matches!(
            build_scenario(&cfg, &VehicleParams::default(), 0),
            Err(ScenarioError::OverlappingSpawns { a: 0, b: 1, lane: 1 })
        ));
    }

    #[test]
    fn non_conflicting_rejected() {
        let cfg = ScenarioConfig {
            main_lanes: 2,
            post_merge_lanes: 3,
            spawns: vec![],
            ..ScenarioConfig::default()
        };
        assert!(matches!(
            build_scenario(&cfg, &VehicleParams::default(), 0),
            Err(ScenarioError::NonConflicting { .. })
        ));
    }
}
