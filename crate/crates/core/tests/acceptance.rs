//! End-to-end acceptance suite. Runs every criterion in order and prints one
//! PASS/FAIL line each; exits nonzero if any fail. Pass a substring argument
//! to run only the criteria whose name contains it.

mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use heatnet::heat::HeatDims;
use heatnet::map::{load_raster, MapRaster};
use heatnet::model::*;
use heatnet::scene::*;
use heatnet::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

fn ensure(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_suite() -> Result<String, String> {
    let start = Instant::now();
    let (params, sample) = micro_instance(1).map_err(|e| e.to_string())?;
    let reports = gradient_report(&params, &sample, None).map_err(|e| e.to_string())?;
    let worst = reports.iter().map(|r| r.worst).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    ensure(
        worst < 1e-5 && elapsed < Duration::from_secs(60) && reports.iter().all(GroupReport::passed),
        format!("worst relative error {worst:.2e} over {} groups in {elapsed:.1?}", reports.len()),
    )
}

fn hetero(heads: usize) -> HeatDims {
    HeatDims {
        node_types: 2,
        input: 4,
        projected: 5,
        edge_attr: 3,
        edge_type: 2,
        heads,
        output: 2 * heads,
    }
}

fn oracle_equivalence() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for heads in [1, 3] {
        for seed in 0..20 {
            let graph = random_graph(&mut rng, 5);
            let (store, layer) = random_layer(seed, hetero(heads));
            let h = random_matrix(&mut rng, 5, 4);
            let (out, alpha) = tape_layer(&store, &layer, &graph, &h, 10.0);
            let (o_out, o_alpha) = heat_oracle(&store, &layer, &graph, &h, 10.0);
            worst = worst.max(max_diff(&out, &o_out)).max(max_diff(&alpha, &o_alpha));
        }
    }
    ensure(worst < 1e-12, format!("max deviation {worst:.2e} over 40 graphs"))
}

fn gat_reduction() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = HeatDims {
        node_types: 1,
        input: 4,
        projected: 5,
        edge_attr: 0,
        edge_type: 0,
        heads: 3,
        output: 6,
    };
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let graph = random_graph(&mut rng, 5);
        let (store, layer) = random_layer(seed, dims);
        let h = random_matrix(&mut rng, 5, 4);
        let (out, _) = tape_layer(&store, &layer, &graph, &h, 10.0);
        let a: Vec<Tensor> = layer.attn.iter().map(|&id| store.get(id).clone()).collect();
        let w: Vec<Tensor> = layer.agg.iter().map(|&id| store.get(id).clone()).collect();
        let oracle = gat_oracle(store.get(layer.node_proj[0]), &a, &w, layer.slope, &graph, &h);
        worst = worst.max(max_diff(&out, &oracle));
    }
    ensure(worst < 1e-12, format!("max deviation {worst:.2e} over 20 graphs"))
}

fn attention_normalization() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_sum: f64 = 0.0;
    let mut bounded = true;
    for seed in 0..100 {
        let n = rng.gen_range(1..9);
        let graph = random_graph(&mut rng, n);
        let (store, layer) = random_layer(seed, hetero(3));
        let h = random_matrix(&mut rng, n, 4);
        let (out, alphas) = tape_layer(&store, &layer, &graph, &h, 10.0);
        for alpha in &alphas {
            for edges in &graph.in_edges {
                let total: f64 = edges.iter().map(|&e| alpha[e]).sum();
                worst_sum = worst_sum.max((total - 1.0).abs());
            }
        }
        bounded &= out.iter().flatten().all(|&v| v > 0.0 && v < 1.0);
    }
    ensure(
        worst_sum < 1e-12 && bounded,
        format!("max |sum - 1| {worst_sum:.2e}, outputs in (0,1): {bounded}"),
    )
}

fn small_model(variant: Variant, horizons: Horizons) -> ModelConfig {
    ModelConfig {
        variant,
        horizons,
        history_hidden: 8,
        projected: 6,
        edge_attr: 4,
        edge_type: 3,
        heads: 2,
        interaction_width: 6,
        map_size: 16,
        map_channels: [2, 4, 4],
        map_width: 5,
        decoder_hidden: 10,
        ..ModelConfig::default()
    }
}

fn frame_invariance() -> Result<String, String> {
    let horizons = Horizons::new(6, 8).map_err(|e| e.to_string())?;
    let scenario = ScenarioConfig {
        horizons,
        vehicles: 3,
        vrus: 2,
        pattern: MotionPattern::Mixed,
        scenes: 10,
        map_size: 16,
        meters_per_pixel: 4.0,
        ..ScenarioConfig::default()
    };
    let scenes = generate_scenes(&scenario, 5).map_err(|e| e.to_string())?;
    let params = ModelParams::init(small_model(Variant::HeatIR, horizons), 5).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let scene = &scenes[k % scenes.len()];
        let tick = scene.decision_tick(horizons);
        let map = Some(Arc::new(scene.map.clone()));
        let base = SceneSample::from_tracks(&scene.scene_id, &scene.tracks, tick, horizons, map.clone())
            .map_err(|e| e.to_string())?
            .ok_or("scene without targets")?;
        let pose = Pose2::new(rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0), rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
        let moved: Vec<AgentTrack> = scene.tracks.iter().map(|t| t.transformed(&pose)).collect();
        let mut other = SceneSample::from_tracks(&scene.scene_id, &moved, tick, horizons, map)
            .map_err(|e| e.to_string())?
            .ok_or("scene without targets")?;
        other.map_attrs = base.map_attrs.clone();
        let a = predict(&params, &base).map_err(|e| e.to_string())?;
        let b = predict(&params, &other).map_err(|e| e.to_string())?;
        for (p, q) in a.trajectories.iter().flatten().zip(b.trajectories.iter().flatten()) {
            worst = worst.max((p[0] - q[0]).abs()).max((p[1] - q[1]).abs());
        }
    }
    ensure(worst < 1e-9, format!("max coordinate change {worst:.2e} over 50 transforms"))
}

fn permutation_equivariance() -> Result<String, String> {
    let horizons = Horizons::new(6, 8).map_err(|e| e.to_string())?;
    let scenario = ScenarioConfig {
        horizons,
        vehicles: 3,
        vrus: 3,
        pattern: MotionPattern::Mixed,
        scenes: 10,
        map_size: 16,
        ..ScenarioConfig::default()
    };
    let samples = generate_synthetic(&scenario, 6).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut rows_match = true;
    for variant in [Variant::Gat, Variant::HeatR, Variant::HeatIR] {
        let params = ModelParams::init(small_model(variant, horizons), 6).map_err(|e| e.to_string())?;
        for s in &samples {
            let mut perm: Vec<usize> = (0..s.len()).collect();
            perm.shuffle(&mut rng);
            let base = predict(&params, s).map_err(|e| e.to_string())?;
            let moved = predict(&params, &s.permuted(&perm)).map_err(|e| e.to_string())?;
            rows_match &= moved.len() == base.len();
            for (k, id) in moved.agent_ids.iter().enumerate() {
                let Some(j) = base.agent_ids.iter().position(|x| x == id) else {
                    rows_match = false;
                    continue;
                };
                for (p, q) in moved.trajectories[k].iter().zip(&base.trajectories[j]) {
                    worst = worst.max((p[0] - q[0]).abs()).max((p[1] - q[1]).abs());
                }
            }
        }
    }
    ensure(
        rows_match && worst < 1e-12,
        format!("max row deviation {worst:.2e} over 30 relabelings"),
    )
}

fn overfit() -> Result<String, String> {
    let start = Instant::now();
    let scenario = ScenarioConfig {
        vehicles: 2,
        vrus: 1,
        pattern: MotionPattern::Mixed,
        scenes: 50,
        ..ScenarioConfig::default()
    };
    let samples = generate_synthetic(&scenario, 7).map_err(|e| e.to_string())?;
    let model = ModelConfig {
        history_hidden: 32,
        decoder_hidden: 64,
        ..ModelConfig::default()
    };
    let params = ModelParams::init(model, 3).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        epochs: 500,
        learning_rate: 3e-3,
        batch_size: 5,
        schedule: Schedule::Cosine,
        clip_norm: Some(5.0),
        ..TrainConfig::default()
    };
    let (trained, _) = train(params, &samples, &[], &config, |_| {}).map_err(|e| e.to_string())?;
    let eval = evaluate(&trained, &samples, 10).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(
        eval.ade < 0.1 && elapsed < Duration::from_secs(600),
        format!("train ADE@3s {:.4} m on {} scenes in {elapsed:.0?}", eval.ade, samples.len()),
    )
}

fn ablation_ordering() -> Result<String, String> {
    let scenario = ScenarioConfig {
        vehicles: 2,
        vrus: 1,
        pattern: MotionPattern::Yielding,
        scenes: 500,
        ..ScenarioConfig::default()
    };
    let samples = generate_synthetic(&scenario, 11).map_err(|e| e.to_string())?;
    let (train_set, val_set) = split_by_scene(samples, 20);
    let config = TrainConfig {
        epochs: 20,
        learning_rate: 3e-3,
        batch_size: 8,
        schedule: Schedule::Cosine,
        clip_norm: Some(5.0),
        ..TrainConfig::default()
    };
    let mut ade = Vec::new();
    for variant in [Variant::R, Variant::Gat, Variant::Heat, Variant::HeatR] {
        let model = ModelConfig {
            variant,
            history_hidden: 16,
            decoder_hidden: 32,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(model, 3).map_err(|e| e.to_string())?;
        let (trained, _) = train(params, &train_set, &[], &config, |_| {}).map_err(|e| e.to_string())?;
        ade.push(evaluate(&trained, &val_set, 10).map_err(|e| e.to_string())?.ade);
    }
    let [r, gat, heat, heat_r] = [ade[0], ade[1], ade[2], ade[3]];
    ensure(
        heat_r <= heat && heat <= 1.05 * gat && heat_r <= 0.9 * r,
        format!("val ADE R {r:.3}, GAT {gat:.3}, HEAT {heat:.3}, HEAT-R {heat_r:.3} ({} val scenes)", val_set.len()),
    )
}

fn one_set(trajectories: Vec<Vec<[f64; 2]>>) -> PredictionSet {
    PredictionSet {
        scene_id: "fixture".into(),
        targets: (0..trajectories.len()).collect(),
        agent_ids: (0..trajectories.len() as u64).collect(),
        trajectories,
    }
}

fn metric_identities() -> Result<String, String> {
    // offsets chosen so every subtraction is exact in binary
    let still = vec![vec![[0.0, 0.0]; 3]];
    let offset = one_set(vec![vec![[0.3, 0.4]; 3]]);
    let moving = vec![vec![[0.0, 0.0], [1.0, 2.0], [2.0, 4.0]]];
    let shifted = one_set(vec![vec![[0.375, 0.5], [1.0, 2.0], [2.375, 4.5]]]);
    let a = ade(&offset, &still).map_err(|e| e.to_string())?;
    let f = fde(&offset, &still).map_err(|e| e.to_string())?;
    let a_moving = ade(&shifted, &moving).map_err(|e| e.to_string())?;
    let f_moving = fde(&shifted, &moving).map_err(|e| e.to_string())?;
    let exact = one_set(moving.clone());
    let zero = ade(&exact, &moving).map_err(|e| e.to_string())? + fde(&exact, &moving).map_err(|e| e.to_string())?;
    let preds = [
        one_set(vec![vec![[0.0, 0.0], [0.0, 0.0], [3.0, 0.0]]]),
        one_set(vec![vec![[0.0, 0.0], [0.0, 0.0], [0.0, 4.0]]]),
    ];
    let truths: [&[Vec<[f64; 2]>]; 2] = [&still, &still];
    let rmse = rmse_at(&preds, &truths, 3).map_err(|e| e.to_string())?;
    let ok = a == 0.5 && f == 0.5 && a_moving == 1.25 / 3.0 && f_moving == 0.625 && zero == 0.0 && rmse == 12.5f64.sqrt();
    ensure(
        ok,
        format!("ade {a}, fde {f}, moving ade {a_moving}, moving fde {f_moving}, exact {zero}, two-sample rmse {rmse}"),
    )
}

fn round_trips() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scenario = ScenarioConfig {
        vehicles: 2,
        vrus: 2,
        pattern: MotionPattern::Mixed,
        scenes: 5,
        map_size: 16,
        ..ScenarioConfig::default()
    };
    let scenes = generate_scenes(&scenario, 10).map_err(|e| e.to_string())?;
    let listed: Vec<(String, Vec<AgentTrack>)> = scenes.iter().map(|s| (s.scene_id.clone(), s.tracks.clone())).collect();
    let csv_path = dir.path().join("scenes.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| e.to_string())?;
    write_tracks(file, &listed).map_err(|e| e.to_string())?;
    let csv_ok = read_tracks(&csv_path).map_err(|e| e.to_string())? == listed;

    let pgm_path = dir.path().join("map.pgm");
    let raster = MapRaster::new(7, (0..49).map(|i| f64::from(i as u8 * 5) / 255.0).collect(), 0.75, [3.5, -2.25])
        .map_err(|e| e.to_string())?;
    raster.save(&pgm_path).map_err(|e| e.to_string())?;
    let map_ok = load_raster(&pgm_path).map_err(|e| e.to_string())? == raster;

    let params_path = dir.path().join("params.bin");
    let params = ModelParams::init(small_model(Variant::HeatIR, scenario.horizons), 10).map_err(|e| e.to_string())?;
    save_params(&params, &params_path).map_err(|e| e.to_string())?;
    let params_ok = load_params(&params_path).map_err(|e| e.to_string())? == params;

    let samples = generate_synthetic(&scenario, 10).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        epochs: 3,
        batch_size: 2,
        seed: 4,
        ..TrainConfig::default()
    };
    let run = || -> Result<(Vec<EpochLog>, ModelParams), String> {
        let p = ModelParams::init(small_model(Variant::HeatIR, scenario.horizons), 10).map_err(|e| e.to_string())?;
        let (p, log) = train(p, &samples[..3], &samples[3..], &config, |_| {}).map_err(|e| e.to_string())?;
        Ok((log, p))
    };
    let (la, pa) = run()?;
    let (lb, pb) = run()?;
    let logs_ok = la == lb && pa == pb;
    ensure(
        csv_ok && map_ok && params_ok && logs_ok,
        format!("scene csv {csv_ok}, pgm+meta {map_ok}, params {params_ok}, same-seed logs {logs_ok}"),
    )
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("gradient suite", gradient_suite),
        ("oracle equivalence", oracle_equivalence),
        ("GAT reduction", gat_reduction),
        ("attention normalization", attention_normalization),
        ("frame invariance", frame_invariance),
        ("permutation equivariance", permutation_equivariance),
        ("overfit", overfit),
        ("ablation ordering", ablation_ordering),
        ("metric identities", metric_identities),
        ("round trips", round_trips),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (status, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{status} {:>2} {name}: {detail} [{:.1?}]", k + 1, start.elapsed());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
