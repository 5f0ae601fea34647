use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AgentState, AgentTrack, AgentType, Horizons, SceneSample};
use crate::error::{Error, Result};
use crate::map::{load_raster, MapRaster};

const HEADER: [&str; 9] = [
    "scene_id",
    "tick_index",
    "agent_id",
    "agent_type",
    "x",
    "y",
    "vx",
    "vy",
    "yaw",
];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    scene_id: String,
    tick_index: i64,
    agent_id: u64,
    agent_type: String,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    yaw: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LoadConfig {
    pub horizons: Horizons,
    /// Directory holding `<scene_id>.pgm`; defaults to `maps/` beside the CSV.
    pub map_dir: Option<PathBuf>,
}


/// One agent's type and its `(tick, state)` rows.
type AgentRows = (AgentType, Vec<(i64, AgentState)>);

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io(std::io::Error::other(e.to_string())),
        _ => Error::Parse {
            line,
            message: e.to_string(),
        },
    }
}

/// Reads every scene's tracks, in order of first appearance.
pub fn read_tracks(path: &Path) -> Result<Vec<(String, Vec<AgentTrack>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::Schema(format!(
            "header {:?} does not match {HEADER:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }

    let mut scene_order: Vec<String> = Vec::new();
    // scene -> agent -> rows
    let mut grouped: BTreeMap<String, BTreeMap<u64, AgentRows>> = BTreeMap::new();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record).map_err(csv_error)? {
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse { line, message };
        let row: Row = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(e.to_string()))?;
        let agent_type: AgentType = row
            .agent_type
            .parse()
            .map_err(|_| parse_err(format!("unknown agent type {:?}", row.agent_type)))?;
        let state = AgentState::new(row.x, row.y, row.vx, row.vy, row.yaw);
        if !state.is_finite() {
            return Err(parse_err("non-finite state".into()));
        }
        let entry = grouped.entry(row.scene_id.clone()).or_insert_with(|| {
            scene_order.push(row.scene_id.clone());
            BTreeMap::new()
        });
        let (ty, rows) = entry
            .entry(row.agent_id)
            .or_insert_with(|| (agent_type, Vec::new()));
        if *ty != agent_type {
            return Err(Error::Schema(format!(
                "agent {} in scene {} changes type from {ty} to {agent_type}",
                row.agent_id, row.scene_id
            )));
        }
        rows.push((row.tick_index, state));
    }

    let mut scenes = Vec::with_capacity(scene_order.len());
    for scene_id in scene_order {
        let agents = grouped.remove(&scene_id).unwrap_or_default();
        let mut tracks = Vec::with_capacity(agents.len());
        for (id, (agent_type, mut rows)) in agents {
            rows.sort_by_key(|r| r.0);
            for w in rows.windows(2) {
                if w[1].0 != w[0].0 + 1 {
                    return Err(Error::Schema(format!(
                        "agent {id} in scene {scene_id}: ticks {} and {} are not consecutive",
                        w[0].0, w[1].0
                    )));
                }
            }
            tracks.push(AgentTrack {
                id,
                agent_type,
                first_tick: rows[0].0,
                states: rows.into_iter().map(|r| r.1).collect(),
            });
        }
        scenes.push((scene_id, tracks));
    }
    Ok(scenes)
}

/// Writes tracks in the scene CSV schema, ordered by scene, tick, then agent.
pub fn write_tracks<W: Write>(out: W, scenes: &[(String, Vec<AgentTrack>)]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    writer.write_record(HEADER).map_err(csv_error)?;
    for (scene_id, tracks) in scenes {
        let mut rows: Vec<Row> = tracks
            .iter()
            .flat_map(|t| {
                t.states.iter().enumerate().map(move |(i, s)| Row {
                    scene_id: scene_id.clone(),
                    tick_index: t.first_tick + i as i64,
                    agent_id: t.id,
                    agent_type: t.agent_type.name().to_string(),
                    x: s.x,
                    y: s.y,
                    vx: s.vx,
                    vy: s.vy,
                    yaw: s.yaw,
                })
            })
            .collect();
        rows.sort_by_key(|r| (r.tick_index, r.agent_id));
        for row in rows {
            writer.serialize(row).map_err(csv_error)?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn scene_map(map_dir: &Path, scene_id: &str) -> Result<Option<Arc<MapRaster>>> {
    let path = map_dir.join(format!("{scene_id}.pgm"));
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(Arc::new(load_raster(&path)?)))
}

/// One sample per (scene, decision tick) with at least one target.
pub fn load_scenes(path: &Path, config: &LoadConfig) -> Result<Vec<SceneSample>> {
    config.horizons.validate()?;
    if std::fs::metadata(path)?.len() == 0 {
        return Ok(Vec::new());
    }
    let map_dir = config.map_dir.clone().unwrap_or_else(|| {
        path.parent()
            .map(|p| p.join("maps"))
            .unwrap_or_else(|| PathBuf::from("maps"))
    });
    let mut samples = Vec::new();
    for (scene_id, tracks) in read_tracks(path)? {
        let map = scene_map(&map_dir, &scene_id)?;
        let first = tracks.iter().map(|t| t.first_tick).min().unwrap_or(0);
        let last = tracks.iter().map(AgentTrack::last_tick).max().unwrap_or(-1);
        for tick in first..=last {
            if let Some(s) = SceneSample::from_tracks(&scene_id, &tracks, tick, config.horizons, map.clone())? {
                samples.push(s);
            }
        }
    }
    Ok(samples)
}
