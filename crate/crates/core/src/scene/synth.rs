//! Desk-scale synthetic scenarios with closed-form kinematics.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AgentState, AgentTrack, AgentType, Horizons, SceneSample};
use crate::error::{Error, Result};
use crate::map::MapRaster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionPattern {
    ConstantVelocity,
    CircularArc,
    LaneChange,
    /// Each agent draws one of the three patterns above.
    Mixed,
    /// An arc vehicle that brakes for a pedestrian crossing ahead of it and
    /// keeps its speed when the crossing is behind it.
    Yielding,
}

impl MotionPattern {
    pub fn name(self) -> &'static str {
        match self {
            MotionPattern::ConstantVelocity => "constant_velocity",
            MotionPattern::CircularArc => "circular_arc",
            MotionPattern::LaneChange => "lane_change",
            MotionPattern::Mixed => "mixed",
            MotionPattern::Yielding => "yielding",
        }
    }
}

impl fmt::Display for MotionPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            MotionPattern::ConstantVelocity,
            MotionPattern::CircularArc,
            MotionPattern::LaneChange,
            MotionPattern::Mixed,
            MotionPattern::Yielding,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown motion pattern {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Seconds per tick.
    pub tick: f64,
    pub horizons: Horizons,
    /// Neighborhood radius (m) used when building interaction graphs.
    pub radius: f64,
    pub vehicles: usize,
    pub vrus: usize,
    pub pattern: MotionPattern,
    pub scenes: usize,
    pub map_size: usize,
    pub meters_per_pixel: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            tick: 0.1,
            horizons: Horizons::default(),
            radius: 30.0,
            vehicles: 3,
            vrus: 1,
            pattern: MotionPattern::ConstantVelocity,
            scenes: 10,
            map_size: 64,
            meters_per_pixel: 1.5,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.horizons.validate()?;
        if !(self.tick > 0.0) || !(self.radius > 0.0) || !(self.meters_per_pixel > 0.0) {
            return Err(Error::Config("tick, radius and map scale must be positive".into()));
        }
        if self.vehicles + self.vrus == 0 {
            return Err(Error::Config("scenario needs at least one agent".into()));
        }
        if self.pattern == MotionPattern::Yielding && (self.vehicles == 0 || self.vrus == 0) {
            return Err(Error::Config("yielding scenes need a vehicle and a vru".into()));
        }
        if self.map_size < 8 {
            return Err(Error::Config("map size must be at least 8 pixels".into()));
        }
        Ok(())
    }
}

/// Constant braking that starts at a given time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Brake {
    pub start: f64,
    pub decel: f64,
}

/// Closed-form planar kinematics, evaluated at time `t` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    Constant {
        start: [f64; 2],
        velocity: [f64; 2],
    },
    /// Travel on a circle; `omega` is the signed angular rate (rad/s).
    Arc {
        center: [f64; 2],
        radius: f64,
        phase: f64,
        omega: f64,
        brake: Option<Brake>,
    },
    /// Straight travel with a lateral offset `offset * sigmoid((t - midpoint) / duration)`.
    LaneChange {
        start: [f64; 2],
        heading: f64,
        speed: f64,
        offset: f64,
        midpoint: f64,
        duration: f64,
    },
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Motion {
    pub fn state_at(&self, t: f64) -> AgentState {
        match *self {
            Motion::Constant { start, velocity } => {
                let heading = velocity[1].atan2(velocity[0]);
                AgentState::new(
                    start[0] + velocity[0] * t,
                    start[1] + velocity[1] * t,
                    velocity[0],
                    velocity[1],
                    heading,
                )
            }
            Motion::Arc {
                center,
                radius,
                phase,
                omega,
                brake,
            } => {
                let speed = omega.abs() * radius;
                let dir = omega.signum();
                let (dist, v) = match brake {
                    Some(b) if t > b.start && b.decel > 0.0 => {
                        let dt = (t - b.start).min(speed / b.decel);
                        (speed * b.start + speed * dt - 0.5 * b.decel * dt * dt, speed - b.decel * dt)
                    }
                    _ => (speed * t, speed),
                };
                let angle = phase + dir * dist / radius;
                let (s, c) = angle.sin_cos();
                let tangent = [-dir * s, dir * c];
                AgentState::new(
                    center[0] + radius * c,
                    center[1] + radius * s,
                    v * tangent[0],
                    v * tangent[1],
                    tangent[1].atan2(tangent[0]),
                )
            }
            Motion::LaneChange {
                start,
                heading,
                speed,
                offset,
                midpoint,
                duration,
            } => {
                let (s, c) = heading.sin_cos();
                let along = [c, s];
                let normal = [-s, c];
                let z = logistic((t - midpoint) / duration);
                let lateral = offset * z;
                let lateral_rate = offset * z * (1.0 - z) / duration;
                let vx = speed * along[0] + lateral_rate * normal[0];
                let vy = speed * along[1] + lateral_rate * normal[1];
                AgentState::new(
                    start[0] + speed * t * along[0] + lateral * normal[0],
                    start[1] + speed * t * along[1] + lateral * normal[1],
                    vx,
                    vy,
                    vy.atan2(vx),
                )
            }
        }
    }

    /// Points along the road this motion travels on, for map rendering.
    fn road_points(&self) -> Vec<[f64; 2]> {
        match *self {
            Motion::Constant { start, velocity } => {
                let speed = velocity[0].hypot(velocity[1]).max(1e-9);
                let dir = [velocity[0] / speed, velocity[1] / speed];
                line_points(start, dir, 80.0)
            }
            Motion::Arc { center, radius, .. } => (0..360)
                .map(|k| {
                    let a = k as f64 * PI / 180.0;
                    [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
                })
                .collect(),
            Motion::LaneChange {
                start,
                heading,
                offset,
                ..
            } => {
                let dir = [heading.cos(), heading.sin()];
                let normal = [-dir[1], dir[0]];
                let shifted = [start[0] + offset * normal[0], start[1] + offset * normal[1]];
                let mut pts = line_points(start, dir, 80.0);
                pts.extend(line_points(shifted, dir, 80.0));
                pts
            }
        }
    }
}

fn line_points(through: [f64; 2], dir: [f64; 2], half_length: f64) -> Vec<[f64; 2]> {
    let steps = (2.0 * half_length) as usize;
    (0..=steps)
        .map(|k| {
            let s = k as f64 - half_length;
            [through[0] + s * dir[0], through[1] + s * dir[1]]
        })
        .collect()
}

/// A generated scene: tracks from tick 0 and the rendered road map.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub scene_id: String,
    pub tracks: Vec<AgentTrack>,
    pub map: MapRaster,
    pub motions: Vec<Motion>,
}

impl SyntheticScene {
    /// The tick at which the sample's history ends.
    pub fn decision_tick(&self, horizons: Horizons) -> i64 {
        horizons.history as i64 - 1
    }
}

fn speed_for(rng: &mut ChaCha8Rng, ty: AgentType) -> f64 {
    match ty {
        AgentType::Vehicle => rng.gen_range(5.0..11.0),
        AgentType::PedestrianBicycle => rng.gen_range(0.8..2.0),
    }
}

fn random_point(rng: &mut ChaCha8Rng, half: f64) -> [f64; 2] {
    [rng.gen_range(-half..half), rng.gen_range(-half..half)]
}

fn random_motion(rng: &mut ChaCha8Rng, pattern: MotionPattern, ty: AgentType, total_time: f64) -> Motion {
    let pattern = match pattern {
        MotionPattern::Mixed | MotionPattern::Yielding => match rng.gen_range(0..3) {
            0 => MotionPattern::ConstantVelocity,
            1 => MotionPattern::CircularArc,
            _ => MotionPattern::LaneChange,
        },
        p => p,
    };
    let speed = speed_for(rng, ty);
    match pattern {
        MotionPattern::CircularArc => {
            let radius = match ty {
                AgentType::Vehicle => rng.gen_range(12.0..24.0),
                AgentType::PedestrianBicycle => rng.gen_range(6.0..18.0),
            };
            let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            Motion::Arc {
                center: random_point(rng, 5.0),
                radius,
                phase: rng.gen_range(-PI..PI),
                omega: dir * speed / radius,
                brake: None,
            }
        }
        MotionPattern::LaneChange => {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            Motion::LaneChange {
                start: random_point(rng, 20.0),
                heading: rng.gen_range(-PI..PI),
                speed,
                offset: sign * rng.gen_range(2.5..3.7),
                midpoint: rng.gen_range(0.2..total_time),
                duration: rng.gen_range(0.3..0.7),
            }
        }
        _ => {
            let heading: f64 = rng.gen_range(-PI..PI);
            Motion::Constant {
                start: random_point(rng, 20.0),
                velocity: [speed * heading.cos(), speed * heading.sin()],
            }
        }
    }
}

/// Arc vehicle plus a crossing pedestrian; the vehicle brakes when the
/// crossing lies ahead of it at the decision time.
fn yielding_pair(rng: &mut ChaCha8Rng, decision_time: f64) -> [Motion; 2] {
    let center = random_point(rng, 3.0);
    let radius = rng.gen_range(12.0..20.0);
    let speed = rng.gen_range(6.0..9.0);
    let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let omega = dir * speed / radius;
    let phase = rng.gen_range(-PI..PI);
    let yields = rng.gen_bool(0.5);

    // arc-length from the vehicle (at the decision time) to the crossing
    let gap = if yields {
        rng.gen_range(14.0..20.0)
    } else {
        -rng.gen_range(6.0..14.0)
    };
    let decision_angle = phase + omega * decision_time;
    let cross_angle = decision_angle + dir * gap / radius;
    let crossing = [
        center[0] + radius * cross_angle.cos(),
        center[1] + radius * cross_angle.sin(),
    ];
    let inward = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
    let walk_dir = [inward * cross_angle.cos(), inward * cross_angle.sin()];
    let walk_speed = rng.gen_range(1.0..1.6);
    let before = rng.gen_range(2.0..5.0);
    let walker = Motion::Constant {
        start: [
            crossing[0] - walk_dir[0] * (before + walk_speed * decision_time),
            crossing[1] - walk_dir[1] * (before + walk_speed * decision_time),
        ],
        velocity: [walk_speed * walk_dir[0], walk_speed * walk_dir[1]],
    };
    let brake = yields.then(|| Brake {
        start: decision_time,
        decel: speed * speed / (2.0 * (gap - 4.0)),
    });
    let vehicle = Motion::Arc {
        center,
        radius,
        phase,
        omega,
        brake,
    };
    [vehicle, walker]
}

/// Renders roads (straight lanes, rings, crossings) into a map raster.
pub fn render_road_map(motions: &[Motion], size: usize, meters_per_pixel: f64) -> MapRaster {
    let mut map = MapRaster::blank(size, meters_per_pixel, [0.0, 0.0]);
    for m in motions {
        let value = match m {
            Motion::Arc { .. } => 0.8,
            _ => 1.0,
        };
        for p in m.road_points() {
            map.stamp_disk(p, 2.0, value);
        }
    }
    map.quantize();
    map
}

/// Generates `config.scenes` scenes deterministically from `seed`.
pub fn generate_scenes(config: &ScenarioConfig, seed: u64) -> Result<Vec<SyntheticScene>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = config.horizons.history + config.horizons.future;
    let total_time = steps as f64 * config.tick;
    let decision_time = (config.horizons.history - 1) as f64 * config.tick;
    let mut scenes = Vec::with_capacity(config.scenes);
    for index in 0..config.scenes {
        let mut types = vec![AgentType::Vehicle; config.vehicles];
        types.extend(std::iter::repeat_n(AgentType::PedestrianBicycle, config.vrus));
        let mut motions: Vec<Motion> = Vec::with_capacity(types.len());
        if config.pattern == MotionPattern::Yielding {
            // reorder so the yielding pair comes first
            types.remove(config.vehicles);
            types.insert(1, AgentType::PedestrianBicycle);
            motions.extend(yielding_pair(&mut rng, decision_time));
            for &ty in &types[2..] {
                let m = random_motion(&mut rng, MotionPattern::ConstantVelocity, ty, total_time);
                motions.push(m);
            }
        } else {
            for &ty in &types {
                motions.push(random_motion(&mut rng, config.pattern, ty, total_time));
            }
        }
        let tracks = types
            .iter()
            .zip(&motions)
            .enumerate()
            .map(|(i, (&agent_type, motion))| AgentTrack {
                id: i as u64 + 1,
                agent_type,
                first_tick: 0,
                states: (0..steps).map(|k| motion.state_at(k as f64 * config.tick)).collect(),
            })
            .collect();
        let map = render_road_map(&motions, config.map_size, config.meters_per_pixel);
        scenes.push(SyntheticScene {
            scene_id: format!("s{index:05}"),
            tracks,
            map,
            motions,
        });
    }
    Ok(scenes)
}

/// Generates scenes and assembles one sample per scene at its decision tick.
pub fn generate_synthetic(config: &ScenarioConfig, seed: u64) -> Result<Vec<SceneSample>> {
    let scenes = generate_scenes(config, seed)?;
    let mut out = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let tick = scene.decision_tick(config.horizons);
        let map = Some(Arc::new(scene.map));
        if let Some(s) = SceneSample::from_tracks(&scene.scene_id, &scene.tracks, tick, config.horizons, map)? {
            out.push(s);
        }
    }
    Ok(out)
}
