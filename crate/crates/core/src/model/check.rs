//! End-to-end finite-difference validation of every parameter group.

use std::sync::Arc;

use serde::Serialize;

use super::{forward_tape, ForwardOptions, ModelConfig, ModelParams, Variant};
use crate::error::{Error, Result};
use crate::gradcheck::{FD_STEP, REL_FLOOR};
use crate::graph::{build_graph, InteractionGraph};
use crate::scene::{generate_scenes, Horizons, MotionPattern, ScenarioConfig, SceneSample};
use crate::params::Bound;
use crate::tensor::{GradFault, Tape, Tensor, Var};

/// Worst relative error allowed for any parameter entry.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub group: String,
    pub entries: usize,
    /// `max |analytic - numeric|` over the group divided by the group's
    /// largest gradient magnitude.
    pub worst: f64,
    pub max_diff: f64,
    pub scale: f64,
}

impl GroupReport {
    pub fn passed(&self) -> bool {
        self.worst < GRADCHECK_TOLERANCE
    }
}

/// A small HEAT-I-R model and a 4-agent scene (two vehicles, two
/// pedestrians; 5 history and 3 future steps; 16x16 map).
pub fn micro_instance(seed: u64) -> Result<(ModelParams, SceneSample)> {
    let horizons = Horizons::new(5, 3)?;
    let scenario = ScenarioConfig {
        horizons,
        vehicles: 2,
        vrus: 2,
        pattern: MotionPattern::Mixed,
        scenes: 1,
        map_size: 16,
        meters_per_pixel: 4.0,
        ..ScenarioConfig::default()
    };
    let scene = generate_scenes(&scenario, seed)?.remove(0);
    let tick = scene.decision_tick(horizons);
    let sample = SceneSample::from_tracks(&scene.scene_id, &scene.tracks, tick, horizons, Some(Arc::new(scene.map)))?
        .ok_or_else(|| Error::Config("micro scene has no targets".into()))?;
    let config = ModelConfig {
        variant: Variant::HeatIR,
        horizons,
        radius: 60.0,
        history_hidden: 6,
        projected: 5,
        edge_attr: 3,
        edge_type: 3,
        heads: 2,
        interaction_width: 4,
        layers: 2,
        map_size: 16,
        map_channels: [2, 3, 3],
        map_width: 4,
        decoder_hidden: 5,
        ..ModelConfig::default()
    };
    Ok((ModelParams::init(config, seed)?, sample))
}

fn mse<'t>(
    tape: &'t Tape,
    params: &ModelParams,
    bound: &Bound<'t>,
    sample: &SceneSample,
    graph: &InteractionGraph,
) -> Result<Var<'t>> {
    let pred = forward_tape(tape, bound, params, sample, graph, ForwardOptions::default())?;
    let truth: Vec<f64> = sample.futures.iter().flatten().flat_map(|p| *p).collect();
    let n = truth.len() as f64;
    let diff = pred.sub(tape.constant(Tensor::new(pred.shape(), truth)?))?;
    Ok(diff.mul(diff)?.sum().scale(1.0 / n))
}

/// Compares tape gradients of the training loss against central differences
/// for every parameter entry and reports, per group, the largest deviation
/// relative to the group's gradient scale. Measuring against the group
/// scale rather than entry by entry keeps difference-quotient roundoff
/// (about 1e-10 here) from dominating entries whose gradient is near zero.
/// `fault` corrupts a backward rule to demonstrate that the check can fail.
pub fn gradient_report(params: &ModelParams, sample: &SceneSample, fault: Option<GradFault>) -> Result<Vec<GroupReport>> {
    let graph = build_graph(sample, params.config.radius);
    let analytic = {
        let tape = Tape::new();
        if let Some(f) = fault {
            tape.inject_fault(f);
        }
        let bound = params.store.bind(&tape, true);
        let loss = mse(&tape, params, &bound, sample, &graph)?;
        bound.gradients(&tape.backward(loss)?)
    };
    let eval = |p: &ModelParams| -> Result<f64> {
        let tape = Tape::new();
        let bound = p.store.bind(&tape, false);
        Ok(mse(&tape, p, &bound, sample, &graph)?.item().unwrap_or(f64::NAN))
    };

    let mut work = params.clone();
    let mut reports: Vec<GroupReport> = params
        .store
        .groups()
        .into_iter()
        .map(|group| GroupReport {
            group,
            entries: 0,
            worst: 0.0,
            max_diff: 0.0,
            scale: 0.0,
        })
        .collect();
    for id in params.store.ids() {
        let group = &params.store.entries()[id.index()].group;
        let report = reports.iter_mut().find(|r| &r.group == group).expect("known group");
        for k in 0..params.store.get(id).numel() {
            let orig = params.store.get(id).data()[k];
            work.store.get_mut(id).data_mut()[k] = orig + FD_STEP;
            let plus = eval(&work)?;
            work.store.get_mut(id).data_mut()[k] = orig - FD_STEP;
            let minus = eval(&work)?;
            work.store.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[id.index()].data()[k];
            let diff = (a - numeric).abs();
            report.max_diff = report.max_diff.max(if diff.is_nan() { f64::INFINITY } else { diff });
            report.scale = report.scale.max(a.abs()).max(numeric.abs());
            report.entries += 1;
        }
    }
    for r in &mut reports {
        r.worst = r.max_diff / r.scale.max(REL_FLOOR);
    }
    Ok(reports)
}
