//! Agent tracks, exclusive coordinate frames, and per-sample records.

mod io;
mod synth;

pub use io::{load_scenes, read_tracks, write_tracks, LoadConfig};
pub use synth::{
    generate_scenes, generate_synthetic, render_road_map, Brake, Motion, MotionPattern, ScenarioConfig,
    SyntheticScene,
};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::MapRaster;

/// Speeds below this are treated as stationary when orienting a frame.
pub const STATIONARY_SPEED: f64 = 1e-6;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentType {
    #[serde(rename = "vehicle")]
    Vehicle,
    #[serde(rename = "vru")]
    PedestrianBicycle,
}

impl AgentType {
    pub const ALL: [AgentType; 2] = [AgentType::Vehicle, AgentType::PedestrianBicycle];
    pub const COUNT: usize = 2;

    pub fn index(self) -> usize {
        match self {
            AgentType::Vehicle => 0,
            AgentType::PedestrianBicycle => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentType::Vehicle => "vehicle",
            AgentType::PedestrianBicycle => "vru",
        }
    }
}

impl fmt::Display for AgentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vehicle" => Ok(AgentType::Vehicle),
            "vru" => Ok(AgentType::PedestrianBicycle),
            other => Err(Error::Schema(format!("unknown agent type {other:?}"))),
        }
    }
}

/// Position (m), velocity (m/s) and yaw (rad) at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub yaw: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, vx: f64, vy: f64, yaw: f64) -> Self {
        AgentState {
            x,
            y,
            vx,
            vy,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.vx, self.vy, self.yaw].iter().all(|v| v.is_finite())
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    /// Direction of travel, or the recorded yaw when (nearly) stationary.
    pub fn heading(&self) -> f64 {
        if self.speed() < STATIONARY_SPEED {
            self.yaw
        } else {
            self.vy.atan2(self.vx)
        }
    }

    /// History-step encoding `(x, y, vx, vy, cos yaw, sin yaw)`.
    pub fn features(&self) -> [f64; 6] {
        [self.x, self.y, self.vx, self.vy, self.yaw.cos(), self.yaw.sin()]
    }
}

/// Rigid planar transform: rotate by `theta`, then translate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2 { x, y, theta }
    }

    pub fn rotate(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let r = self.rotate(p);
        [r[0] + self.x, r[1] + self.y]
    }

    pub fn apply_state(&self, s: &AgentState) -> AgentState {
        let p = self.apply(s.position());
        let v = self.rotate([s.vx, s.vy]);
        AgentState::new(p[0], p[1], v[0], v[1], s.yaw + self.theta)
    }
}

/// An agent's exclusive frame: origin at its position, +x along its heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub origin: [f64; 2],
    pub heading: f64,
}

impl Frame {
    pub fn anchored_at(state: &AgentState) -> Self {
        Frame {
            origin: state.position(),
            heading: state.heading(),
        }
    }

    fn rotate_into(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
    }

    pub fn point_to_local(&self, p: [f64; 2]) -> [f64; 2] {
        self.rotate_into([p[0] - self.origin[0], p[1] - self.origin[1]])
    }

    pub fn vector_to_local(&self, v: [f64; 2]) -> [f64; 2] {
        self.rotate_into(v)
    }

    pub fn point_to_global(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [
            c * p[0] - s * p[1] + self.origin[0],
            s * p[0] + c * p[1] + self.origin[1],
        ]
    }

    pub fn state_to_local(&self, s: &AgentState) -> AgentState {
        let p = self.point_to_local(s.position());
        let v = self.vector_to_local([s.vx, s.vy]);
        AgentState::new(p[0], p[1], v[0], v[1], s.yaw - self.heading)
    }
}

/// One agent's consecutive states at a fixed tick, starting at `first_tick`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub id: u64,
    pub agent_type: AgentType,
    pub first_tick: i64,
    pub states: Vec<AgentState>,
}

impl AgentTrack {
    pub fn last_tick(&self) -> i64 {
        self.first_tick + self.states.len() as i64 - 1
    }

    pub fn index_of(&self, tick: i64) -> Option<usize> {
        let i = tick - self.first_tick;
        (i >= 0 && (i as usize) < self.states.len()).then_some(i as usize)
    }

    pub fn state_at(&self, tick: i64) -> Option<&AgentState> {
        self.index_of(tick).map(|i| &self.states[i])
    }

    pub fn transformed(&self, pose: &Pose2) -> AgentTrack {
        AgentTrack {
            states: self.states.iter().map(|s| pose.apply_state(s)).collect(),
            ..self.clone()
        }
    }
}

/// Re-expresses the `history` states ending at index `t` in the agent's
/// exclusive frame at `t`. Returns the local history and the global state at `t`.
pub fn to_exclusive_frame(track: &AgentTrack, t: usize, history: usize) -> Result<(Vec<AgentState>, AgentState)> {
    if t >= track.states.len() || t + 1 < history {
        return Err(Error::Truncation {
            agent_id: track.id,
            available: (t + 1).min(track.states.len()),
            required: history,
        });
    }
    let current = track.states[t];
    let frame = Frame::anchored_at(&current);
    let local = track.states[t + 1 - history..=t]
        .iter()
        .map(|s| frame.state_to_local(s))
        .collect();
    Ok((local, current))
}

/// Like [`to_exclusive_frame`] but front-pads short histories by repeating
/// the earliest available state. Requires at least two observed steps.
fn padded_exclusive_history(track: &AgentTrack, t: usize, history: usize) -> Result<(Vec<AgentState>, AgentState)> {
    if t + 1 < 2 || t >= track.states.len() {
        return Err(Error::Truncation {
            agent_id: track.id,
            available: t + 1,
            required: 2,
        });
    }
    let current = track.states[t];
    let frame = Frame::anchored_at(&current);
    let available = (t + 1).min(history);
    let first = t + 1 - available;
    let mut local = Vec::with_capacity(history);
    let earliest = frame.state_to_local(&track.states[first]);
    local.extend(std::iter::repeat_n(earliest, history - available));
    local.extend(track.states[first..=t].iter().map(|s| frame.state_to_local(s)));
    Ok((local, current))
}

/// Agent attributes relative to the map: `(x-cx, y-cy)` divided by the map
/// half-extent, then `vx, vy, cos yaw, sin yaw`.
pub fn vehicle_to_map_attr(state: &AgentState, center: [f64; 2], half_extent: f64) -> [f64; 6] {
    [
        (state.x - center[0]) / half_extent,
        (state.y - center[1]) / half_extent,
        state.vx,
        state.vy,
        state.yaw.cos(),
        state.yaw.sin(),
    ]
}

/// Inverse of [`vehicle_to_map_attr`] (yaw recovered from its cos/sin).
pub fn map_attr_to_state(attr: &[f64; 6], center: [f64; 2], half_extent: f64) -> AgentState {
    AgentState::new(
        attr[0] * half_extent + center[0],
        attr[1] * half_extent + center[1],
        attr[2],
        attr[3],
        attr[5].atan2(attr[4]),
    )
}

/// Traceback and prediction horizons, in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Horizons {
    pub history: usize,
    pub future: usize,
}

impl Default for Horizons {
    fn default() -> Self {
        Horizons {
            history: 10,
            future: 30,
        }
    }
}

impl Horizons {
    pub fn new(history: usize, future: usize) -> Result<Self> {
        let h = Horizons { history, future };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.history < 2 || self.future < 1 {
            return Err(Error::Config(format!(
                "need history >= 2 and horizon >= 1, got {} / {}",
                self.history, self.future
            )));
        }
        Ok(())
    }
}

/// Everything the model consumes for one scene at one decision time.
#[derive(Debug, Clone)]
pub struct SceneSample {
    pub scene_id: String,
    pub decision_tick: i64,
    pub agent_ids: Vec<u64>,
    pub agent_types: Vec<AgentType>,
    /// Per agent, `history` states in that agent's exclusive frame.
    pub histories: Vec<Vec<AgentState>>,
    /// Per agent, the global state at the decision tick.
    pub current: Vec<AgentState>,
    /// Per target (in agent order), `future` positions in the target's frame.
    pub futures: Vec<Vec<[f64; 2]>>,
    pub target_mask: Vec<bool>,
    pub vehicle_mask: Vec<bool>,
    pub pedestrian_mask: Vec<bool>,
    pub map: Option<Arc<MapRaster>>,
    /// Per agent map-relative attributes; empty when there is no map.
    pub map_attrs: Vec<[f64; 6]>,
}

impl SceneSample {
    /// Assembles the sample at `tick` from a scene's tracks. Returns `None`
    /// when no agent qualifies as a target.
    pub fn from_tracks(
        scene_id: &str,
        tracks: &[AgentTrack],
        tick: i64,
        horizons: Horizons,
        map: Option<Arc<MapRaster>>,
    ) -> Result<Option<SceneSample>> {
        horizons.validate()?;
        let mut order: Vec<&AgentTrack> = tracks.iter().collect();
        order.sort_by_key(|t| t.id);

        let mut sample = SceneSample {
            scene_id: scene_id.to_string(),
            decision_tick: tick,
            agent_ids: Vec::new(),
            agent_types: Vec::new(),
            histories: Vec::new(),
            current: Vec::new(),
            futures: Vec::new(),
            target_mask: Vec::new(),
            vehicle_mask: Vec::new(),
            pedestrian_mask: Vec::new(),
            map: None,
            map_attrs: Vec::new(),
        };
        for track in order {
            let Some(t) = track.index_of(tick) else { continue };
            if t < 1 {
                continue;
            }
            let full_history = t + 1 >= horizons.history;
            let (history, current) = padded_exclusive_history(track, t, horizons.history)?;
            let has_future = t + horizons.future < track.states.len();
            let is_target = full_history && has_future;
            if is_target {
                let frame = Frame::anchored_at(&current);
                sample.futures.push(
                    track.states[t + 1..=t + horizons.future]
                        .iter()
                        .map(|s| frame.point_to_local(s.position()))
                        .collect(),
                );
            }
            sample.agent_ids.push(track.id);
            sample.agent_types.push(track.agent_type);
            sample.histories.push(history);
            sample.current.push(current);
            sample.target_mask.push(is_target);
            sample.vehicle_mask.push(track.agent_type == AgentType::Vehicle);
            sample.pedestrian_mask.push(track.agent_type == AgentType::PedestrianBicycle);
        }
        if !sample.target_mask.iter().any(|&t| t) {
            return Ok(None);
        }
        sample.set_map(map);
        Ok(Some(sample))
    }

    /// Attaches a map and recomputes the map-relative attributes.
    pub fn set_map(&mut self, map: Option<Arc<MapRaster>>) {
        self.map_attrs = match &map {
            Some(m) => self
                .current
                .iter()
                .map(|s| vehicle_to_map_attr(s, m.center(), m.half_extent()))
                .collect(),
            None => Vec::new(),
        };
        self.map = map;
    }

    pub fn len(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agent_ids.is_empty()
    }

    pub fn horizons(&self) -> Horizons {
        Horizons {
            history: self.histories.first().map_or(0, Vec::len),
            future: self.futures.first().map_or(0, Vec::len),
        }
    }

    /// Agent indices with a set target bit, in agent order.
    pub fn target_indices(&self) -> Vec<usize> {
        self.target_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &t)| t.then_some(i))
            .collect()
    }

    pub fn frame(&self, agent: usize) -> Frame {
        Frame::anchored_at(&self.current[agent])
    }

    /// Reorders agents so that new agent `k` is old agent `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> SceneSample {
        let pick = |v: &Vec<bool>| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let targets = self.target_indices();
        let future_of = |i: usize| targets.iter().position(|&t| t == i).map(|k| self.futures[k].clone());
        SceneSample {
            scene_id: self.scene_id.clone(),
            decision_tick: self.decision_tick,
            agent_ids: perm.iter().map(|&i| self.agent_ids[i]).collect(),
            agent_types: perm.iter().map(|&i| self.agent_types[i]).collect(),
            histories: perm.iter().map(|&i| self.histories[i].clone()).collect(),
            current: perm.iter().map(|&i| self.current[i]).collect(),
            futures: perm.iter().filter_map(|&i| future_of(i)).collect(),
            target_mask: pick(&self.target_mask),
            vehicle_mask: pick(&self.vehicle_mask),
            pedestrian_mask: pick(&self.pedestrian_mask),
            map: self.map.clone(),
            map_attrs: if self.map_attrs.is_empty() {
                Vec::new()
            } else {
                perm.iter().map(|&i| self.map_attrs[i]).collect()
            },
        }
    }

    /// Checks mask/agent-count consistency.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            self.agent_types.len(),
            self.histories.len(),
            self.current.len(),
            self.target_mask.len(),
            self.vehicle_mask.len(),
            self.pedestrian_mask.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::Mask(format!("per-agent field lengths {lens:?} differ from {n} agents")));
        }
        if !self.map_attrs.is_empty() && self.map_attrs.len() != n {
            return Err(Error::Mask("map attribute count differs from agent count".into()));
        }
        let targets = self.target_mask.iter().filter(|&&t| t).count();
        if targets != self.futures.len() {
            return Err(Error::Mask(format!(
                "{targets} targets but {} future tracks",
                self.futures.len()
            )));
        }
        for i in 0..n {
            if self.target_mask[i] && !(self.vehicle_mask[i] || self.pedestrian_mask[i]) {
                return Err(Error::Mask(format!("target {i} has no type")));
            }
        }
        Ok(())
    }
}
