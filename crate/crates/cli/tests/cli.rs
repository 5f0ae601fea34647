use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use heatnet::map::MapRaster;
use heatnet::model::{evaluate, load_params, save_params, ModelConfig, ModelParams, Variant};
use heatnet::scene::*;
use serde_json::Value;

const SMALL: &str = "history = 5
horizon = 4
map_size = 16
history_hidden = 6
decoder_hidden = 8
projected = 4
interaction_width = 4
heads = 2
layers = 1
map_width = 3
";

fn heatnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heatnet"))
        .args(args)
        .env("HEATNET_LOG", "error")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = heatnet(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the small-model config file and a generated dataset into `dir`.
fn setup(dir: &Path, extra: &[&str]) -> (String, String) {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let data = dir.join("data");
    let mut args = vec!["gen", "--config", s(&cfg), "--out", s(&data), "--seed", "1", "--scenes", "6", "--pattern", "mixed"];
    args.extend(extra);
    ok(&args);
    (s(&cfg).to_string(), s(&data.join("scenes.csv")).to_string())
}

fn scene_ids(csv: &Path) -> Vec<String> {
    let mut ids: Vec<String> = fs::read_to_string(csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    ids.dedup();
    ids
}

#[test]
fn gen_writes_requested_scenes_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["gen", "--seed", "1", "--scenes", "10", "--out", s(out), "--history", "5", "--horizon", "4", "--map-size", "16"]);
    }
    assert_eq!(scene_ids(&a.join("scenes.csv")).len(), 10);
    for entry in walk(&a) {
        let rel = entry.strip_prefix(&a).unwrap();
        assert_eq!(fs::read(&entry).unwrap(), fs::read(b.join(rel)).unwrap(), "{}", rel.display());
    }
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

#[test]
fn generated_files_reload_into_the_same_samples() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    ok(&["gen", "--seed", "3", "--scenes", "4", "--out", s(&out), "--history", "5", "--horizon", "4", "--map-size", "16", "--pattern", "lane_change"]);
    let horizons = Horizons::new(5, 4).unwrap();
    let scenario = ScenarioConfig {
        horizons,
        scenes: 4,
        map_size: 16,
        pattern: MotionPattern::LaneChange,
        ..ScenarioConfig::default()
    };
    let direct = generate_synthetic(&scenario, 3).unwrap();
    let loaded = load_scenes(&out.join("scenes.csv"), &LoadConfig { horizons, map_dir: None }).unwrap();
    assert_eq!(loaded.len(), direct.len());
    for (l, d) in loaded.iter().zip(&direct) {
        assert_eq!(l.scene_id, d.scene_id);
        assert_eq!(l.agent_ids, d.agent_ids);
        assert_eq!(l.histories, d.histories);
        assert_eq!(l.futures, d.futures);
        assert_eq!(l.current, d.current);
        assert_eq!(l.map, d.map);
        assert_eq!(l.map_attrs, d.map_attrs);
    }
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.cfg");
    fs::write(&cfg, "scenes = 2\nseed = 5\nhistory = 5\nhorizon = 4\nmap_size = 16\nout = from_file\n").unwrap();
    ok(&["gen", "--config", s(&cfg)]);
    assert_eq!(scene_ids(&dir.path().join("from_file/scenes.csv")).len(), 2);
    let flagged = dir.path().join("flagged");
    ok(&["gen", "--config", s(&cfg), "--scenes", "3", "--out", s(&flagged)]);
    assert_eq!(scene_ids(&flagged.join("scenes.csv")).len(), 3);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path(), &[]);
    assert_eq!(heatnet(&["train", "--config", &cfg, "--data", &data, "--variant", "HEAT-X"]).status.code(), Some(2));
    assert_eq!(heatnet(&["train", "--config", &cfg, "--data", &data, "--bogus"]).status.code(), Some(2));
    assert_eq!(heatnet(&["gen", "--scenes", "many"]).status.code(), Some(2));
    let missing = heatnet(&["eval", "--data", &data, "--params", s(&dir.path().join("none.bin"))]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("does not exist"));
}

fn read_log(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn training_reduces_loss_and_logs_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path(), &[]);
    let params = dir.path().join("r.bin");
    ok(&["train", "--config", &cfg, "--data", &data, "--variant", "R", "--epochs", "5", "--lr", "0.005", "--batch-size", "2", "--val-percent", "0", "--out", s(&params)]);
    let log = read_log(&params.with_extension("jsonl"));
    assert_eq!(log.len(), 5);
    let losses: Vec<f64> = log.iter().map(|l| l["train_loss"].as_f64().unwrap()).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    assert_eq!(load_params(&params).unwrap().variant(), Variant::R);
}

#[test]
fn zero_rate_keeps_initial_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path(), &[]);
    let params = dir.path().join("p.bin");
    ok(&["train", "--config", &cfg, "--data", &data, "--epochs", "2", "--lr", "0", "--seed", "4", "--out", s(&params)]);
    let trained = load_params(&params).unwrap();
    let fresh = ModelParams::init(trained.config.clone(), 4).unwrap();
    assert_eq!(trained.store, fresh.store);
}

#[test]
fn same_seed_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path(), &[]);
    let run = |name: &str| {
        let p = dir.path().join(name);
        ok(&["train", "--config", &cfg, "--data", &data, "--epochs", "2", "--batch-size", "2", "--seed", "9", "--out", s(&p)]);
        (fs::read(&p).unwrap(), fs::read(p.with_extension("jsonl")).unwrap())
    };
    assert_eq!(run("a.bin"), run("b.bin"));
}

fn still_track(id: u64, ty: AgentType, x: f64, y: f64, ticks: usize) -> AgentTrack {
    AgentTrack {
        id,
        agent_type: ty,
        first_tick: 0,
        states: vec![AgentState::new(x, y, 0.0, 0.0, 0.3); ticks],
    }
}

#[test]
fn zero_motion_with_zero_output_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("still.csv");
    let scenes = vec![
        ("a".to_string(), vec![still_track(1, AgentType::Vehicle, 0.0, 0.0, 9), still_track(2, AgentType::PedestrianBicycle, 5.0, 1.0, 9)]),
        ("b".to_string(), vec![still_track(1, AgentType::Vehicle, 3.0, -2.0, 9)]),
    ];
    write_tracks(fs::File::create(&csv).unwrap(), &scenes).unwrap();
    let config = ModelConfig {
        variant: Variant::HeatR,
        horizons: Horizons::new(5, 4).unwrap(),
        history_hidden: 4,
        decoder_hidden: 4,
        projected: 4,
        interaction_width: 6,
        ..ModelConfig::default()
    };
    let mut params = ModelParams::init(config, 0).unwrap();
    let ids: Vec<_> = params.store.ids().collect();
    for id in ids {
        if params.store.entries()[id.index()].group.starts_with("decoder") {
            params.store.get_mut(id).data_mut().fill(0.0);
        }
    }
    let path = dir.path().join("zero.bin");
    save_params(&params, &path).unwrap();
    let out = ok(&["eval", "--data", s(&csv), "--params", s(&path)]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["variant"], "HEAT-R");
    assert_eq!(report["ade"], 0.0);
    assert_eq!(report["fde"], 0.0);
    assert!(report["rmse_by_second"].as_array().unwrap().iter().all(|v| v == 0.0));
}

#[test]
fn eval_matches_library_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path(), &[]);
    let params = dir.path().join("p.bin");
    ok(&["train", "--config", &cfg, "--data", &data, "--epochs", "1", "--out", s(&params)]);
    let report_path = dir.path().join("eval.json");
    ok(&["eval", "--data", &data, "--params", s(&params), "--out", s(&report_path), "--steps-per-second", "2"]);
    let report: Value = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    let loaded = load_params(&params).unwrap();
    let samples = load_scenes(Path::new(&data), &LoadConfig { horizons: loaded.config.horizons, map_dir: None }).unwrap();
    let e = evaluate(&loaded, &samples, 2).unwrap();
    assert!((report["ade"].as_f64().unwrap() - e.ade).abs() < 1e-12);
    assert!((report["fde"].as_f64().unwrap() - e.fde).abs() < 1e-12);
    let rmse: Vec<f64> = report["rmse_by_second"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(rmse.len(), e.rmse_by_second.len());
    for (a, b) in rmse.iter().zip(&e.rmse_by_second) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn mismatched_variant_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path(), &[]);
    let params = dir.path().join("p.bin");
    ok(&["train", "--config", &cfg, "--data", &data, "--epochs", "1", "--variant", "HEAT", "--out", s(&params)]);
    let out = heatnet(&["eval", "--data", &data, "--params", s(&params), "--variant", "HEAT-I-R"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("incompatible"));
}

#[test]
fn predict_lists_targets_only_in_both_frames() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("one.csv");
    let moving = |id: u64, ty: AgentType, start: [f64; 2], v: [f64; 2], ticks: usize| {
        let m = Motion::Constant { start, velocity: v };
        AgentTrack {
            id,
            agent_type: ty,
            first_tick: 0,
            states: (0..ticks).map(|k| m.state_at(k as f64 * 0.1)).collect(),
        }
    };
    // agent 8 stops being observed at the decision tick, so it is context only
    let tracks = vec![
        moving(7, AgentType::Vehicle, [10.0, 20.0], [3.0, 4.0], 9),
        moving(8, AgentType::PedestrianBicycle, [14.0, 22.0], [0.0, -1.0], 5),
    ];
    write_tracks(fs::File::create(&csv).unwrap(), &[("solo".to_string(), tracks.clone())]).unwrap();
    let horizons = Horizons::new(5, 4).unwrap();
    let config = ModelConfig {
        variant: Variant::HeatR,
        horizons,
        history_hidden: 4,
        decoder_hidden: 4,
        projected: 4,
        interaction_width: 6,
        ..ModelConfig::default()
    };
    let params_path = dir.path().join("p.bin");
    save_params(&ModelParams::init(config, 2).unwrap(), &params_path).unwrap();
    let out = ok(&["predict", "--data", s(&csv), "--params", s(&params_path), "--graph-dir", s(&dir.path().join("graphs"))]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "scene_id,agent_id,step,x_local,y_local,x_global,y_global");
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(rows.len(), 4);
    let sample = SceneSample::from_tracks("solo", &tracks, 4, horizons, None::<Arc<MapRaster>>).unwrap().unwrap();
    let frame = Frame::anchored_at(&sample.current[0]);
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row[0], "solo");
        assert_eq!(row[1], "7");
        assert_eq!(row[2], (k + 1).to_string());
        let v: Vec<f64> = row[3..].iter().map(|x| x.parse().unwrap()).collect();
        let g = frame.point_to_global([v[0], v[1]]);
        assert!((g[0] - v[2]).abs() < 1e-9 && (g[1] - v[3]).abs() < 1e-9);
    }
    let graph = fs::read_to_string(dir.path().join("graphs/solo_t4.csv")).unwrap();
    assert_eq!(graph.lines().count(), 5);
}

#[test]
fn gradcheck_reports_each_group_once() {
    let out = ok(&["gradcheck", "--seed", "2"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let groups: Vec<&str> = text.lines().filter(|l| l.starts_with("ok")).map(|l| l.split_whitespace().nth(1).unwrap()).collect();
    let mut unique = groups.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(groups.len(), unique.len());
    assert!(!groups.is_empty());
    assert!(text.contains("gradient check passed"));
}

#[test]
fn corrupted_gradient_fails_the_check() {
    let out = heatnet(&["gradcheck", "--fault-tanh-scale", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}
