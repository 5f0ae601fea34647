//! Browser demo. A `Demo` holds one synthetic dataset and a small HEAT-R
//! model; the page calls `scene`, `train` and `inspect` and draws the JSON
//! they return. Everything below the wasm wrapper is plain Rust so it can be
//! tested natively.

use heatnet::graph::{build_graph, InteractionGraph};
use heatnet::heat::{layer_attention, EdgeInputs};
use heatnet::model::{encode_histories, predict, train, ModelConfig, ModelParams, Schedule, TrainConfig, Variant};
use heatnet::scene::{generate_scenes, ScenarioConfig, SceneSample, SyntheticScene};
use heatnet::tensor::Tape;
use heatnet::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Scenes drawn for training; the first one is displayed.
pub const TRAIN_SCENES: usize = 32;

#[derive(Debug, Serialize)]
pub struct AgentView {
    pub id: u64,
    #[serde(rename = "type")]
    pub agent_type: &'static str,
    pub target: bool,
    /// Global positions up to and including the decision tick.
    pub history: Vec<[f64; 2]>,
    /// Global positions after the decision tick.
    pub future: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize)]
pub struct EdgeView {
    pub src: usize,
    pub dst: usize,
    #[serde(rename = "type")]
    pub edge_type: usize,
}

#[derive(Debug, Serialize)]
pub struct MapView {
    pub size: usize,
    pub meters_per_pixel: f64,
    pub center: [f64; 2],
    pub pixels: Vec<u8>,
}

#[derive(Debug, Serialize)]
pub struct SceneView {
    pub scene_id: String,
    pub radius: f64,
    pub agents: Vec<AgentView>,
    pub edges: Vec<EdgeView>,
    pub map: MapView,
}

#[derive(Debug, Serialize)]
pub struct TrainView {
    pub epochs: usize,
    pub losses: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct NeighborWeight {
    pub id: u64,
    /// Attention on this neighbor, one entry per head.
    pub weights: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct AgentInspection {
    pub id: u64,
    pub origin: [f64; 2],
    pub heading: f64,
    /// The agent's own history and ground-truth future in its exclusive frame.
    pub history_local: Vec<[f64; 2]>,
    pub future_local: Vec<[f64; 2]>,
    /// Present only for prediction targets.
    pub predicted_local: Option<Vec<[f64; 2]>>,
    pub predicted_global: Option<Vec<[f64; 2]>>,
    /// First-layer attention over the agent's in-neighborhood, self included.
    pub attention: Vec<NeighborWeight>,
}

/// Demo state without any JavaScript types.
pub struct DemoState {
    scene: SyntheticScene,
    samples: Vec<SceneSample>,
    graph: InteractionGraph,
    params: ModelParams,
    losses: Vec<f64>,
}

impl DemoState {
    pub fn new(seed: u64, pattern: &str, vehicles: usize, vrus: usize, radius: f64) -> Result<Self> {
        let scenario = ScenarioConfig {
            pattern: pattern.parse()?,
            vehicles,
            vrus,
            radius,
            scenes: TRAIN_SCENES,
            ..ScenarioConfig::default()
        };
        let scenes = generate_scenes(&scenario, seed)?;
        let horizons = scenario.horizons;
        let mut samples = Vec::new();
        for s in &scenes {
            let tick = s.decision_tick(horizons);
            if let Some(sample) = SceneSample::from_tracks(&s.scene_id, &s.tracks, tick, horizons, None)? {
                samples.push(sample);
            }
        }
        if samples.first().map(|s| &s.scene_id) != Some(&scenes[0].scene_id) {
            return Err(Error::Config("the displayed scene has no prediction targets".into()));
        }
        let config = ModelConfig {
            variant: Variant::HeatR,
            horizons,
            radius,
            history_hidden: 16,
            projected: 16,
            interaction_width: 24,
            decoder_hidden: 32,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(config, seed)?;
        let graph = build_graph(&samples[0], radius);
        Ok(DemoState {
            scene: scenes.into_iter().next().expect("at least one scene"),
            samples,
            graph,
            params,
            losses: Vec::new(),
        })
    }

    fn sample(&self) -> &SceneSample {
        &self.samples[0]
    }

    pub fn scene(&self) -> SceneView {
        let sample = self.sample();
        let tick = sample.decision_tick;
        let agents = sample
            .agent_ids
            .iter()
            .zip(&sample.agent_types)
            .zip(&sample.target_mask)
            .map(|((&id, ty), &target)| {
                let track = self.scene.tracks.iter().find(|t| t.id == id).expect("sample agents come from tracks");
                let at = |k: i64| track.state_at(k).map(|s| s.position());
                AgentView {
                    id,
                    agent_type: ty.name(),
                    target,
                    history: (track.first_tick..=tick).filter_map(at).collect(),
                    future: (tick + 1..=track.last_tick()).filter_map(at).collect(),
                }
            })
            .collect();
        let edges = self
            .graph
            .edges
            .iter()
            .zip(&self.graph.type_ids)
            .map(|(e, &t)| EdgeView {
                src: e.src,
                dst: e.dst,
                edge_type: t,
            })
            .collect();
        let map = &self.scene.map;
        SceneView {
            scene_id: sample.scene_id.clone(),
            radius: self.params.config.radius,
            agents,
            edges,
            map: MapView {
                size: map.size(),
                meters_per_pixel: map.meters_per_pixel(),
                center: map.center(),
                pixels: map.pixels().iter().map(|p| (p * 255.0).round() as u8).collect(),
            },
        }
    }

    /// Continues training for `epochs` more epochs over all scenes.
    pub fn train(&mut self, epochs: usize) -> Result<TrainView> {
        let config = TrainConfig {
            epochs,
            learning_rate: 3e-3,
            batch_size: 8,
            seed: self.losses.len() as u64,
            schedule: Schedule::Constant,
            clip_norm: Some(5.0),
            ..TrainConfig::default()
        };
        let (params, log) = train(self.params.clone(), &self.samples, &[], &config, |_| {})?;
        self.params = params;
        self.losses.extend(log.iter().map(|l| l.train_loss));
        Ok(TrainView {
            epochs: self.losses.len(),
            losses: self.losses.clone(),
        })
    }

    pub fn inspect(&self, agent: usize) -> Result<AgentInspection> {
        let sample = self.sample();
        if agent >= sample.len() {
            return Err(Error::Config(format!("agent {agent} out of range ({} agents)", sample.len())));
        }
        let current = sample.current[agent];
        let target = sample.target_indices().iter().position(|&i| i == agent);
        let (predicted_local, predicted_global) = match target {
            Some(k) => {
                let pred = predict(&self.params, sample)?;
                let global = pred.to_global(sample);
                (Some(pred.trajectories[k].clone()), Some(global[k].clone()))
            }
            None => (None, None),
        };
        let future_local = match target {
            Some(k) => sample.futures[k].clone(),
            None => Vec::new(),
        };
        Ok(AgentInspection {
            id: sample.agent_ids[agent],
            origin: current.position(),
            heading: current.heading(),
            history_local: sample.histories[agent].iter().map(|s| [s.x, s.y]).collect(),
            future_local,
            predicted_local,
            predicted_global,
            attention: self.attention(agent)?,
        })
    }

    fn attention(&self, agent: usize) -> Result<Vec<NeighborWeight>> {
        let sample = self.sample();
        let tape = Tape::new();
        let bound = self.params.store.bind(&tape, false);
        let r = encode_histories(&tape, &bound, &self.params, sample, &sample.agent_types)?;
        let edges = EdgeInputs::new(&tape, &self.graph, self.params.config.position_scale);
        let heads: Vec<Vec<f64>> = layer_attention(&bound, &self.graph, edges, r, &self.params.layers[0])?
            .into_iter()
            .map(|a| a.value().data().to_vec())
            .collect();
        Ok(self.graph.in_edges[agent]
            .iter()
            .map(|&e| NeighborWeight {
                id: sample.agent_ids[self.graph.edges[e].src],
                weights: heads.iter().map(|h| h[e]).collect(),
            })
            .collect())
    }
}

fn js_error(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(value: &T) -> std::result::Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub struct Demo(DemoState);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, pattern: &str, vehicles: u32, vrus: u32, radius: f64) -> std::result::Result<Demo, JsError> {
        DemoState::new(u64::from(seed), pattern, vehicles as usize, vrus as usize, radius)
            .map(Demo)
            .map_err(js_error)
    }

    /// Agents, interaction edges and the map raster as JSON.
    pub fn scene(&self) -> std::result::Result<String, JsError> {
        to_json(&self.0.scene())
    }

    /// Trains `epochs` more epochs; returns the loss history as JSON.
    pub fn train(&mut self, epochs: u32) -> std::result::Result<String, JsError> {
        to_json(&self.0.train(epochs as usize).map_err(js_error)?)
    }

    /// One agent's exclusive-frame view, prediction and attention as JSON.
    pub fn inspect(&self, agent: u32) -> std::result::Result<String, JsError> {
        to_json(&self.0.inspect(agent as usize).map_err(js_error)?)
    }
}
