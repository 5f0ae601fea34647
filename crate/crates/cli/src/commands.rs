use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use heatnet::graph::build_graph;
use heatnet::model::{
    evaluate, gradient_report, load_params, micro_instance, predict as predict_sample, save_params, split_by_scene, train as fit,
    ModelParams, GRADCHECK_TOLERANCE,
};
use heatnet::scene::{generate_scenes, load_scenes, write_tracks, AgentTrack, LoadConfig, SceneSample};
use heatnet::tensor::GradFault;
use heatnet::{Error, Result};
use log::info;
use serde::Serialize;

use crate::config::RunConfig;

/// 2 for bad invocations or settings, 1 for everything that fails at run time.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    let path = path.as_deref().ok_or_else(|| Error::Config(format!("--{} is required", key.replace('_', "-"))))?;
    if !path.exists() {
        return Err(Error::Config(format!("{key} file {} does not exist", path.display())));
    }
    Ok(path)
}

fn output(config: &RunConfig, default: &str) -> PathBuf {
    config.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

/// Writes `<out>/scenes.csv` and `<out>/maps/<scene_id>.pgm` with sidecars.
pub fn gen(config: &RunConfig) -> Result<()> {
    let dir = output(config, "data");
    let scenes = generate_scenes(&config.scenario, config.seed)?;
    fs::create_dir_all(dir.join("maps"))?;
    let listed: Vec<(String, Vec<AgentTrack>)> = scenes.iter().map(|s| (s.scene_id.clone(), s.tracks.clone())).collect();
    write_tracks(BufWriter::new(File::create(dir.join("scenes.csv"))?), &listed)?;
    for s in &scenes {
        s.map.save(&dir.join("maps").join(format!("{}.pgm", s.scene_id)))?;
    }
    info!("wrote {} scenes to {}", scenes.len(), dir.display());
    Ok(())
}

fn load_data(config: &RunConfig, horizons: heatnet::scene::Horizons) -> Result<Vec<SceneSample>> {
    let path = required(&config.data, "data")?;
    let samples = load_scenes(
        path,
        &LoadConfig {
            horizons,
            map_dir: None,
        },
    )?;
    info!("loaded {} samples from {}", samples.len(), path.display());
    Ok(samples)
}

pub fn train(config: &RunConfig) -> Result<()> {
    let samples = load_data(config, config.horizons)?;
    let (train_set, val_set) = split_by_scene(samples, config.val_percent);
    let out = output(config, "params.bin");
    let log_path = config.log.clone().unwrap_or_else(|| out.with_extension("jsonl"));
    let params = ModelParams::init(config.model.clone(), config.seed)?;
    info!(
        "training {} on {} samples ({} held out), {} parameters",
        config.variant,
        train_set.len(),
        val_set.len(),
        params.store.numel()
    );
    let mut log = BufWriter::new(File::create(&log_path)?);
    let mut write_error = None;
    let (trained, _) = fit(params, &train_set, &val_set, &config.train, |line| {
        let result = serde_json::to_writer(&mut log, line)
            .map_err(Error::from)
            .and_then(|()| writeln!(log).map_err(Error::from));
        if let Err(e) = result {
            write_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_error {
        return Err(e);
    }
    log.flush()?;
    save_params(&trained, &out)?;
    info!("wrote {} and {}", out.display(), log_path.display());
    Ok(())
}

/// Loads the parameter file and checks it against any explicitly chosen
/// variant or horizons.
fn load_model(config: &RunConfig) -> Result<ModelParams> {
    let params = load_params(required(&config.params, "params")?)?;
    let c = &params.config;
    if config.is_explicit("variant") && c.variant != config.variant {
        return Err(Error::Compatibility(format!("file holds {}, {} requested", c.variant, config.variant)));
    }
    if (config.is_explicit("history") || config.is_explicit("horizon")) && c.horizons != config.horizons {
        return Err(Error::Compatibility(format!(
            "file trained for {}/{} steps, {}/{} requested",
            c.horizons.history, c.horizons.future, config.horizons.history, config.horizons.future
        )));
    }
    Ok(params)
}

#[derive(Debug, Serialize)]
struct Report {
    variant: String,
    ade: f64,
    fde: f64,
    rmse_by_second: Vec<f64>,
}

fn sink(config: &RunConfig) -> Result<Box<dyn Write>> {
    Ok(match &config.out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(io::stdout().lock()),
    })
}

pub fn eval(config: &RunConfig) -> Result<()> {
    let params = load_model(config)?;
    let samples = load_data(config, params.config.horizons)?;
    let e = evaluate(&params, &samples, config.steps_per_second)?;
    let report = Report {
        variant: params.variant().name().to_string(),
        ade: e.ade,
        fde: e.fde,
        rmse_by_second: e.rmse_by_second,
    };
    let mut out = sink(config)?;
    serde_json::to_writer(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn predict(config: &RunConfig) -> Result<()> {
    let params = load_model(config)?;
    let mut samples = load_data(config, params.config.horizons)?;
    if let Some(id) = &config.scene {
        samples.retain(|s| &s.scene_id == id);
        if samples.is_empty() {
            return Err(Error::Config(format!("no scene {id:?} in the data")));
        }
    }
    if let Some(dir) = &config.graph_dir {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_writer(sink(config)?);
    let io_err = |e: csv::Error| Error::Io(io::Error::other(e));
    w.write_record(["scene_id", "agent_id", "step", "x_local", "y_local", "x_global", "y_global"])
        .map_err(io_err)?;
    for s in &samples {
        let pred = predict_sample(&params, s)?;
        let global = pred.to_global(s);
        for (k, id) in pred.agent_ids.iter().enumerate() {
            for (step, (l, g)) in pred.trajectories[k].iter().zip(&global[k]).enumerate() {
                w.write_record([
                    s.scene_id.clone(),
                    id.to_string(),
                    (step + 1).to_string(),
                    l[0].to_string(),
                    l[1].to_string(),
                    g[0].to_string(),
                    g[1].to_string(),
                ])
                .map_err(io_err)?;
            }
        }
        if let Some(dir) = &config.graph_dir {
            let path = dir.join(format!("{}_t{}.csv", s.scene_id, s.decision_tick));
            build_graph(s, params.config.radius).write_csv(File::create(path)?, &s.agent_ids)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Prints each group's worst relative error; `Ok(false)` if any exceed
/// the tolerance.
pub fn gradcheck(config: &RunConfig, fault_tanh_scale: Option<f64>) -> Result<bool> {
    let (params, sample) = micro_instance(config.seed)?;
    let reports = gradient_report(&params, &sample, fault_tanh_scale.map(GradFault::TanhScale))?;
    let mut out = io::stdout().lock();
    for r in &reports {
        writeln!(
            out,
            "{:<6} {:<24} entries {:>5} worst {:.3e}",
            if r.passed() { "ok" } else { "FAIL" },
            r.group,
            r.entries,
            r.worst
        )?;
    }
    let passed = reports.iter().all(|r| r.passed());
    writeln!(
        out,
        "{} (tolerance {GRADCHECK_TOLERANCE:e})",
        if passed { "gradient check passed" } else { "gradient check failed" }
    )?;
    Ok(passed)
}
