//! The three-channel predictor, its ablation variants, training and metrics.

mod check;
mod file;
mod metrics;
mod train;

pub use check::{gradient_report, micro_instance, GroupReport, GRADCHECK_TOLERANCE};
pub use file::{load_params, load_params_expecting, save_params};
pub use metrics::{ade, evaluate, fde, loss, rmse_at, trajectory_ade, trajectory_fde, Evaluation};
pub use train::{sample_loss, split_by_scene, train, Adam, EpochLog, Schedule, TrainConfig};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_graph, InteractionGraph};
use crate::heat::{heat_stack, EdgeInputs, HeatDims, HeatLayerParams};
use crate::map::{encode_map, gate_select, CnnParams, GateParams, MAP_ATTR_WIDTH};
use crate::params::{Bound, ParamStore};
use crate::scene::{AgentType, Horizons, SceneSample};
use crate::seq::{gru_encode, lstm_decode, resolve_types, Conditioning, GruParams, LstmDecoderParams, HISTORY_FEATURES};
use crate::tensor::{Tape, Tensor, Var};

/// Which channels feed the decoder, mirroring the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "R")]
    R,
    #[serde(rename = "GAT")]
    Gat,
    #[serde(rename = "GAT-R")]
    GatR,
    #[serde(rename = "HEAT")]
    Heat,
    #[serde(rename = "HEAT-R")]
    HeatR,
    #[serde(rename = "HEAT-I-R")]
    HeatIR,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interaction {
    /// One node type, no edge features.
    Gat,
    Heat,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::R,
        Variant::Gat,
        Variant::GatR,
        Variant::Heat,
        Variant::HeatR,
        Variant::HeatIR,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::R => "R",
            Variant::Gat => "GAT",
            Variant::GatR => "GAT-R",
            Variant::Heat => "HEAT",
            Variant::HeatR => "HEAT-R",
            Variant::HeatIR => "HEAT-I-R",
        }
    }

    /// Whether the encoded history is fed straight to the decoder.
    pub fn uses_dynamics(self) -> bool {
        matches!(self, Variant::R | Variant::GatR | Variant::HeatR | Variant::HeatIR)
    }

    pub fn interaction(self) -> Option<Interaction> {
        match self {
            Variant::R => None,
            Variant::Gat | Variant::GatR => Some(Interaction::Gat),
            _ => Some(Interaction::Heat),
        }
    }

    pub fn uses_map(self) -> bool {
        self == Variant::HeatIR
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected R, GAT, GAT-R, HEAT, HEAT-R or HEAT-I-R)")))
    }
}

/// Architecture and data-shape settings; everything a parameter file must
/// agree on to be loadable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub horizons: Horizons,
    /// Neighborhood radius (m) for interaction edges.
    pub radius: f64,
    pub history_hidden: usize,
    pub projected: usize,
    pub edge_attr: usize,
    pub edge_type: usize,
    pub heads: usize,
    pub interaction_width: usize,
    pub layers: usize,
    pub map_size: usize,
    pub map_channels: [usize; 3],
    pub map_width: usize,
    pub decoder_hidden: usize,
    pub conditioning: Conditioning,
    pub slope: f64,
    /// Lengths and speeds are divided by this before entering the network,
    /// and decoded positions multiplied by it.
    pub position_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::HeatIR,
            horizons: Horizons::default(),
            radius: 30.0,
            history_hidden: 64,
            projected: 32,
            edge_attr: 8,
            edge_type: 8,
            heads: 3,
            interaction_width: 48,
            layers: 2,
            map_size: 64,
            map_channels: [8, 16, 16],
            map_width: 32,
            decoder_hidden: 128,
            conditioning: Conditioning::Repeated,
            slope: 0.2,
            position_scale: 10.0,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(variant: Variant) -> Self {
        ModelConfig {
            variant,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.horizons.validate()?;
        let positive = [
            self.history_hidden,
            self.decoder_hidden,
            self.map_width,
            self.map_size,
        ];
        if positive.contains(&0) || self.map_channels.contains(&0) {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if !(self.radius > 0.0) || !(self.position_scale > 0.0) || !self.slope.is_finite() {
            return Err(Error::Config("radius and position scale must be positive".into()));
        }
        if self.variant.interaction().is_some() {
            if self.layers == 0 {
                return Err(Error::Config("interaction variants need at least one layer".into()));
            }
            self.layer_dims(0).validate()?;
        }
        Ok(())
    }

    /// Dimensions of interaction layer `index`.
    pub fn layer_dims(&self, index: usize) -> HeatDims {
        let heat = self.variant.interaction() == Some(Interaction::Heat);
        HeatDims {
            node_types: if heat { AgentType::COUNT } else { 1 },
            input: if index == 0 {
                self.history_hidden
            } else {
                self.interaction_width
            },
            projected: self.projected,
            edge_attr: if heat { self.edge_attr } else { 0 },
            edge_type: if heat { self.edge_type } else { 0 },
            heads: self.heads,
            output: self.interaction_width,
        }
    }

    /// Width of the decoder's conditioning feature.
    pub fn decoder_input(&self) -> usize {
        let mut w = 0;
        if self.variant.uses_dynamics() {
            w += self.history_hidden;
        }
        if self.variant.interaction().is_some() {
            w += self.interaction_width;
        }
        if self.variant.uses_map() {
            w += self.map_width;
        }
        w
    }
}

/// All learnable weights of the predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    /// History encoders indexed by agent type.
    pub encoders: Vec<GruParams>,
    pub layers: Vec<HeatLayerParams>,
    pub cnn: Option<CnnParams>,
    pub gate: Option<GateParams>,
    /// Future decoders indexed by agent type.
    pub decoders: Vec<LstmDecoderParams>,
}

impl ModelParams {
    /// Random initialization, deterministic in `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoders = AgentType::ALL
            .iter()
            .map(|t| {
                let g = format!("encoder.{}", t.name());
                GruParams::init(&mut store, &g, HISTORY_FEATURES, config.history_hidden, &mut rng)
            })
            .collect();
        let mut layers = Vec::new();
        if config.variant.interaction().is_some() {
            for k in 0..config.layers {
                let g = format!("interaction.{k}");
                layers.push(HeatLayerParams::init(&mut store, &g, config.layer_dims(k), config.slope, &mut rng)?);
            }
        }
        let (cnn, gate) = if config.variant.uses_map() {
            let cnn = CnnParams::init(
                &mut store,
                "map.cnn",
                config.map_size,
                config.map_channels,
                config.map_width,
                config.slope,
                &mut rng,
            );
            let gate = GateParams::init(&mut store, "map.gate", config.map_width, &mut rng);
            (Some(cnn), Some(gate))
        } else {
            (None, None)
        };
        let decoders = AgentType::ALL
            .iter()
            .map(|t| {
                let g = format!("decoder.{}", t.name());
                LstmDecoderParams::init(&mut store, &g, config.decoder_input(), config.decoder_hidden, &mut rng)
            })
            .collect();
        Ok(ModelParams {
            config,
            store,
            encoders,
            layers,
            cnn,
            gate,
            decoders,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Copies every parameter whose name exists in `other`, taking the
    /// leading block when `other`'s tensor is larger along the first axis
    /// and equal elsewhere. Returns the number of tensors copied.
    pub fn copy_shared_from(&mut self, other: &ModelParams) -> usize {
        let mut copied = 0;
        let ids: Vec<_> = self.store.ids().collect();
        for id in ids {
            let name = self.store.entries()[id.index()].name.clone();
            let Some(src_id) = other.store.find(&name) else { continue };
            let src = other.store.get(src_id);
            let dst = self.store.get_mut(id);
            if src.shape() == dst.shape() {
                *dst = src.clone();
                copied += 1;
            } else if src.rank() == 2 && dst.rank() == 2 && src.cols() == dst.cols() && src.rows() >= dst.rows() {
                let n = dst.numel();
                dst.data_mut().copy_from_slice(&src.data()[..n]);
                copied += 1;
            }
        }
        copied
    }
}

/// Switches for the channel-nesting checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Replace interaction features with zeros before the decoder.
    pub zero_interaction: bool,
    /// Replace gated map features with zeros before the decoder.
    pub zero_map: bool,
}

/// Per-target predictions in each target's exclusive frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub scene_id: String,
    /// Agent index of each target within the sample.
    pub targets: Vec<usize>,
    pub agent_ids: Vec<u64>,
    pub trajectories: Vec<Vec<[f64; 2]>>,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.trajectories.first().map_or(0, Vec::len)
    }

    /// Maps every trajectory back to world coordinates through the target's
    /// current state in `sample`.
    pub fn to_global(&self, sample: &SceneSample) -> Vec<Vec<[f64; 2]>> {
        self.targets
            .iter()
            .zip(&self.trajectories)
            .map(|(&i, traj)| {
                let frame = sample.frame(i);
                traj.iter().map(|&p| frame.point_to_global(p)).collect()
            })
            .collect()
    }
}

/// Stacks per-group results (rows listed in `index`) back into row order.
fn assemble<'t>(tape: &'t Tape, parts: Vec<(Vec<usize>, Var<'t>)>) -> Result<Var<'t>> {
    let order: Vec<usize> = parts.iter().flat_map(|(idx, _)| idx.iter().copied()).collect();
    let vars: Vec<Var<'t>> = parts.into_iter().map(|(_, v)| v).collect();
    let stacked = if vars.len() == 1 {
        vars[0]
    } else {
        tape.concat(&vars, 0)?
    };
    if order.iter().enumerate().all(|(k, &i)| k == i) {
        return Ok(stacked);
    }
    let mut inverse = vec![0; order.len()];
    for (k, &i) in order.iter().enumerate() {
        inverse[i] = k;
    }
    stacked.gather_rows(&inverse)
}

fn group_by_type(types: &[AgentType], rows: &[usize]) -> Vec<(AgentType, Vec<usize>)> {
    AgentType::ALL
        .iter()
        .map(|&t| (t, rows.iter().copied().filter(|&i| types[i] == t).collect::<Vec<_>>()))
        .filter(|(_, idx)| !idx.is_empty())
        .collect()
}

/// Encodes every agent's history with its type's GRU: `[n x history_hidden]`.
pub fn encode_histories<'t>(
    tape: &'t Tape,
    bound: &Bound<'t>,
    params: &ModelParams,
    sample: &SceneSample,
    types: &[AgentType],
) -> Result<Var<'t>> {
    let scale = params.config.position_scale;
    let steps = sample.histories.first().map_or(0, Vec::len);
    let all: Vec<usize> = (0..sample.len()).collect();
    let mut parts = Vec::new();
    for (ty, idx) in group_by_type(types, &all) {
        let inputs = (0..steps)
            .map(|t| {
                let data = idx
                    .iter()
                    .flat_map(|&i| {
                        let mut f = sample.histories[i][t].features();
                        for v in &mut f[..4] {
                            *v /= scale;
                        }
                        f
                    })
                    .collect();
                Ok(tape.constant(Tensor::new(vec![idx.len(), HISTORY_FEATURES], data)?))
            })
            .collect::<Result<Vec<_>>>()?;
        parts.push((idx, gru_encode(bound, &inputs, &params.encoders[ty.index()])?));
    }
    assemble(tape, parts)
}

/// Records the full forward pass and returns `[targets x 2 * future]`
/// positions (meters, exclusive frames) in target order.
pub fn forward_tape<'t>(
    tape: &'t Tape,
    bound: &Bound<'t>,
    params: &ModelParams,
    sample: &SceneSample,
    graph: &InteractionGraph,
    options: ForwardOptions,
) -> Result<Var<'t>> {
    let config = &params.config;
    sample.validate()?;
    let types = resolve_types(&sample.vehicle_mask, &sample.pedestrian_mask)?;
    let n = sample.len();
    if graph.node_count() != n {
        return Err(Error::Config(format!("graph has {} nodes for {n} agents", graph.node_count())));
    }
    let targets = sample.target_indices();
    if targets.is_empty() {
        return Err(Error::UndefinedMetric("sample has no targets"));
    }
    let future = sample.horizons().future;
    if future != config.horizons.future || sample.horizons().history != config.horizons.history {
        return Err(Error::Config(format!(
            "sample horizons {:?} differ from model horizons {:?}",
            sample.horizons(),
            config.horizons
        )));
    }

    let r = encode_histories(tape, bound, params, sample, &types)?;
    let mut channels = Vec::new();
    if config.variant.uses_dynamics() {
        channels.push(r);
    }
    if config.variant.interaction().is_some() {
        let g = if options.zero_interaction {
            tape.constant(Tensor::zeros(&[n, config.interaction_width]))
        } else {
            let edges = EdgeInputs::new(tape, graph, config.position_scale);
            heat_stack(bound, graph, edges, r, &params.layers)?
        };
        channels.push(g);
    }
    if let (Some(cnn), Some(gate)) = (&params.cnn, &params.gate) {
        let m = if options.zero_map {
            tape.constant(Tensor::zeros(&[n, config.map_width]))
        } else {
            let raster = sample
                .map
                .as_ref()
                .ok_or_else(|| Error::Config(format!("variant {} needs a scene map", config.variant)))?;
            let feature = encode_map(bound, raster, cnn)?;
            let attrs = Tensor::new(
                vec![n, MAP_ATTR_WIDTH],
                sample.map_attrs.iter().flat_map(|a| a.iter().copied()).collect(),
            )?;
            gate_select(bound, feature, tape.constant(attrs), gate)?
        };
        channels.push(m);
    }
    let features = if channels.len() == 1 {
        channels[0]
    } else {
        tape.concat(&channels, 1)?
    };

    let mut parts = Vec::new();
    for (ty, idx) in group_by_type(&types, &targets) {
        let rows = features.gather_rows(&idx)?;
        let decoded = lstm_decode(bound, rows, &params.decoders[ty.index()], future, config.conditioning)?;
        let local: Vec<usize> = idx
            .iter()
            .map(|i| targets.iter().position(|t| t == i).expect("target row"))
            .collect();
        parts.push((local, decoded));
    }
    Ok(assemble(tape, parts)?.scale(config.position_scale))
}

pub(crate) fn to_prediction_set(sample: &SceneSample, out: &Tensor) -> PredictionSet {
    let targets = sample.target_indices();
    let trajectories = (0..out.rows())
        .map(|r| out.row(r).chunks(2).map(|p| [p[0], p[1]]).collect())
        .collect();
    PredictionSet {
        scene_id: sample.scene_id.clone(),
        agent_ids: targets.iter().map(|&i| sample.agent_ids[i]).collect(),
        targets,
        trajectories,
    }
}

/// Predicts every target of `sample` in one pass over `graph`.
pub fn forward(params: &ModelParams, sample: &SceneSample, graph: &InteractionGraph) -> Result<PredictionSet> {
    forward_with(params, sample, graph, ForwardOptions::default())
}

pub fn forward_with(
    params: &ModelParams,
    sample: &SceneSample,
    graph: &InteractionGraph,
    options: ForwardOptions,
) -> Result<PredictionSet> {
    let tape = Tape::new();
    let bound = params.store.bind(&tape, false);
    let out = forward_tape(&tape, &bound, params, sample, graph, options)?;
    Ok(to_prediction_set(sample, &out.value()))
}

/// Builds the interaction graph with the model's radius and predicts.
pub fn predict(params: &ModelParams, sample: &SceneSample) -> Result<PredictionSet> {
    let graph = build_graph(sample, params.config.radius);
    forward(params, sample, &graph)
}
