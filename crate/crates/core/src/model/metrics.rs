use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{predict, ModelParams, PredictionSet};
use crate::error::{Error, Result};
use crate::scene::SceneSample;

type Trajectory = Vec<[f64; 2]>;

fn check_pair(pred: &[Trajectory], truth: &[Trajectory]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predicted vs {} true trajectories", pred.len(), truth.len())));
    }
    for (p, t) in pred.iter().zip(truth) {
        if p.len() != t.len() {
            return Err(Error::Shape(format!("horizon {} vs {}", p.len(), t.len())));
        }
    }
    Ok(())
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Mean squared error over targets, steps and both coordinates.
pub fn loss(pred: &PredictionSet, truth: &[Trajectory]) -> Result<f64> {
    check_pair(&pred.trajectories, truth)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.trajectories.iter().zip(truth) {
        for (a, b) in p.iter().zip(t) {
            sum += (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
            count += 2;
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric("loss over zero targets"));
    }
    Ok(sum / count as f64)
}

/// Average displacement error of one trajectory.
pub fn trajectory_ade(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> f64 {
    pred.iter().zip(truth).map(|(&a, &b)| dist(a, b)).sum::<f64>() / pred.len() as f64
}

/// Final displacement error of one trajectory.
pub fn trajectory_fde(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> f64 {
    match (pred.last(), truth.last()) {
        (Some(&a), Some(&b)) => dist(a, b),
        _ => f64::NAN,
    }
}

type PairMetric = fn(&[[f64; 2]], &[[f64; 2]]) -> f64;

fn mean_over_targets(pred: &[Trajectory], truth: &[Trajectory], f: PairMetric, what: &'static str) -> Result<f64> {
    check_pair(pred, truth)?;
    if pred.is_empty() || pred[0].is_empty() {
        return Err(Error::UndefinedMetric(what));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| f(p, t)).sum::<f64>() / pred.len() as f64)
}

/// ADE averaged over the targets of a prediction set.
pub fn ade(pred: &PredictionSet, truth: &[Trajectory]) -> Result<f64> {
    mean_over_targets(&pred.trajectories, truth, trajectory_ade, "ADE over zero targets")
}

/// FDE averaged over the targets of a prediction set.
pub fn fde(pred: &PredictionSet, truth: &[Trajectory]) -> Result<f64> {
    mean_over_targets(&pred.trajectories, truth, trajectory_fde, "FDE over zero targets")
}

/// Root-mean-square position error at 1-based horizon step `step`, pooled
/// over every target of every sample.
pub fn rmse_at(preds: &[PredictionSet], truths: &[&[Trajectory]], step: usize) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::Shape(format!("{} prediction sets for {} samples", preds.len(), truths.len())));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in preds.iter().zip(truths) {
        check_pair(&p.trajectories, t)?;
        for (a, b) in p.trajectories.iter().zip(t.iter()) {
            if step == 0 || step > a.len() {
                return Err(Error::Range {
                    step,
                    horizon: a.len(),
                });
            }
            sum += dist(a[step - 1], b[step - 1]).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric("RMSE over zero targets"));
    }
    Ok((sum / count as f64).sqrt())
}

/// Dataset-level metrics, each averaged over all targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub ade: f64,
    pub fde: f64,
    /// RMSE at each whole second within the horizon.
    pub rmse_by_second: Vec<f64>,
    pub targets: usize,
}

/// Predicts every sample (in parallel) and pools the metrics.
pub fn evaluate(params: &ModelParams, samples: &[SceneSample], steps_per_second: usize) -> Result<Evaluation> {
    let preds = samples
        .par_iter()
        .map(|s| predict(params, s))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(&preds, samples, steps_per_second)
}

pub(crate) fn evaluate_predictions(preds: &[PredictionSet], samples: &[SceneSample], steps_per_second: usize) -> Result<Evaluation> {
    let mut ade_sum = 0.0;
    let mut fde_sum = 0.0;
    let mut targets = 0;
    for (p, s) in preds.iter().zip(samples) {
        check_pair(&p.trajectories, &s.futures)?;
        for (a, b) in p.trajectories.iter().zip(&s.futures) {
            ade_sum += trajectory_ade(a, b);
            fde_sum += trajectory_fde(a, b);
            targets += 1;
        }
    }
    if targets == 0 {
        return Err(Error::UndefinedMetric("evaluation over zero targets"));
    }
    let horizon = preds[0].horizon();
    let truths: Vec<&[Trajectory]> = samples.iter().map(|s| s.futures.as_slice()).collect();
    let rmse_by_second = match horizon.checked_div(steps_per_second) {
        None => Vec::new(),
        Some(seconds) => (1..=seconds)
            .map(|k| rmse_at(preds, &truths, k * steps_per_second))
            .collect::<Result<_>>()?,
    };
    Ok(Evaluation {
        ade: ade_sum / targets as f64,
        fde: fde_sum / targets as f64,
        rmse_by_second,
        targets,
    })
}
