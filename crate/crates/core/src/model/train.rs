use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::evaluate_predictions;
use super::{forward_tape, to_prediction_set, ForwardOptions, ModelParams};
use crate::error::{Error, Result};
use crate::graph::{build_graph, InteractionGraph};
use crate::scene::SceneSample;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule: Schedule,
    /// Rescales the averaged batch gradient to at most this global norm.
    pub clip_norm: Option<f64>,
}

/// Learning-rate schedule over epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate to zero over the run.
    Cosine,
}

impl Schedule {
    /// Rate for 1-based `epoch` of `epochs`.
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => {
                let progress = (epoch - 1) as f64 / epochs.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine),
            _ => Err(Error::Config(format!("unknown schedule {s:?}"))),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            schedule: Schedule::Constant,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || self.batch_size == 0 {
            return Err(Error::Config("learning rate must be non-negative and batch size positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("moment decays must lie in [0, 1) and epsilon be positive".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ade: Option<f64>,
    pub val_fde: Option<f64>,
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: &TrainConfig, shapes: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = shapes.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Adam {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, p) in params.iter_mut().enumerate() {
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = self.v[k].data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let (m, v) = (self.m[k].data(), self.v[k].data());
            for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
                *pi -= self.lr * (mi / c1) / ((vi / c2).sqrt() + self.epsilon);
            }
        }
    }
}

/// Mean squared error of one sample and its gradient for every parameter.
pub fn sample_loss(params: &ModelParams, sample: &SceneSample, graph: &InteractionGraph) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let bound = params.store.bind(&tape, true);
    let pred = forward_tape(&tape, &bound, params, sample, graph, ForwardOptions::default())?;
    let truth: Vec<f64> = sample.futures.iter().flatten().flat_map(|p| *p).collect();
    let n = truth.len();
    let truth = tape.constant(Tensor::new(pred.shape(), truth)?);
    let diff = pred.sub(truth)?;
    let loss = diff.mul(diff)?.sum().scale(1.0 / n as f64);
    let value = loss.item().unwrap_or(f64::NAN);
    let grads = tape.backward(loss)?;
    Ok((value, bound.gradients(&grads)))
}

fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Splits samples into (train, validation) by a hash of the scene id, so
/// all samples of a scene land on the same side.
pub fn split_by_scene(samples: Vec<SceneSample>, val_percent: u64) -> (Vec<SceneSample>, Vec<SceneSample>) {
    samples
        .into_iter()
        .partition(|s| fnv1a(&s.scene_id) % 100 >= val_percent)
}

/// Mini-batch training. Per-sample gradients within a batch are computed
/// in parallel and summed in sample order, so results do not depend on the
/// thread count. `on_epoch` sees each log line as it is produced.
pub fn train(
    mut params: ModelParams,
    train_set: &[SceneSample],
    val_set: &[SceneSample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(ModelParams, Vec<EpochLog>)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let radius = params.config.radius;
    let graphs: Vec<InteractionGraph> = train_set.iter().map(|s| build_graph(s, radius)).collect();
    let val_graphs: Vec<InteractionGraph> = val_set.iter().map(|s| build_graph(s, radius)).collect();
    let initial: Vec<Tensor> = params.store.entries().iter().map(|e| e.value.clone()).collect();
    let mut adam = Adam::new(config, &initial);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        adam.set_learning_rate(config.schedule.rate(config.learning_rate, epoch, config.epochs));
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| sample_loss(&params, &train_set[i], &graphs[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut total: Vec<Tensor> = initial.iter().map(|t| Tensor::zeros(t.shape())).collect();
            for (value, grads) in &results {
                loss_sum += value;
                for (acc, g) in total.iter_mut().zip(grads) {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
            }
            let mut scale = 1.0 / batch.len() as f64;
            if let Some(limit) = config.clip_norm {
                let norm = scale * total.iter().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt();
                if norm > limit {
                    scale *= limit / norm;
                }
            }
            for t in &mut total {
                for v in t.data_mut() {
                    *v *= scale;
                }
            }
            if !loss_sum.is_finite() || total.iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::TrainingFailure { epoch });
            }
            let mut refs: Vec<&mut Tensor> = params.store.values_mut().collect();
            adam.update(&mut refs, &total);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let (val_ade, val_fde) = if val_set.is_empty() {
            (None, None)
        } else {
            let preds = val_set
                .par_iter()
                .zip(&val_graphs)
                .map(|(s, g)| {
                    let tape = Tape::new();
                    let bound = params.store.bind(&tape, false);
                    let out = forward_tape(&tape, &bound, &params, s, g, ForwardOptions::default())?;
                    Ok(to_prediction_set(s, &out.value()))
                })
                .collect::<Result<Vec<_>>>()?;
            let eval = evaluate_predictions(&preds, val_set, 0)?;
            (Some(eval.ade), Some(eval.fde))
        };
        let entry = EpochLog {
            epoch,
            train_loss,
            val_ade,
            val_fde,
        };
        log::info!(
            "epoch {epoch}: loss {train_loss:.6} val ade {:?} fde {:?}",
            entry.val_ade,
            entry.val_fde
        );
        on_epoch(&entry);
        log.push(entry);
    }
    Ok((params, log))
}
