//! Run settings assembled from built-in defaults, an optional `key = value`
//! file, and command-line flags, in increasing order of precedence.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use heatnet::model::{ModelConfig, Schedule, TrainConfig, Variant};
use heatnet::scene::{Horizons, MotionPattern, ScenarioConfig};
use heatnet::{Error, Result};

/// Keys accepted in config files. Flags use the same names with `-` for `_`.
pub const KEYS: &[&str] = &[
    "seed",
    "variant",
    "radius",
    "history",
    "horizon",
    "threads",
    "out",
    "data",
    "params",
    "log",
    "graph_dir",
    "scene",
    "epochs",
    "lr",
    "batch_size",
    "schedule",
    "clip_norm",
    "val_percent",
    "scenes",
    "pattern",
    "vehicles",
    "vrus",
    "map_size",
    "meters_per_pixel",
    "history_hidden",
    "decoder_hidden",
    "projected",
    "interaction_width",
    "heads",
    "layers",
    "map_width",
    "steps_per_second",
];

const PATH_KEYS: &[&str] = &["out", "data", "params", "log", "graph_dir"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: Variant,
    pub radius: f64,
    pub horizons: Horizons,
    /// Worker cap; `None` leaves the pool at its default size.
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub graph_dir: Option<PathBuf>,
    pub scene: Option<String>,
    pub train: TrainConfig,
    pub val_percent: u64,
    pub scenario: ScenarioConfig,
    pub model: ModelConfig,
    pub steps_per_second: usize,
    /// Keys that came from the file or a flag rather than a default.
    pub explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            variant: Variant::HeatIR,
            radius: 30.0,
            horizons: Horizons::default(),
            threads: None,
            out: None,
            data: None,
            params: None,
            log: None,
            graph_dir: None,
            scene: None,
            train: TrainConfig::default(),
            val_percent: 20,
            scenario: ScenarioConfig::default(),
            model: ModelConfig::default(),
            steps_per_second: 10,
            explicit: BTreeSet::new(),
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment. Relative paths are
/// resolved against the file's directory.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut pairs = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
        let key = key.trim().replace('-', "_");
        let mut value = value.trim().to_string();
        if PATH_KEYS.contains(&key.as_str()) && Path::new(&value).is_relative() {
            value = base.join(&value).to_string_lossy().into_owned();
        }
        pairs.insert(key, value);
    }
    Ok(pairs)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    /// Defaults, overlaid by `file`, overlaid by `flags`.
    pub fn resolve(file: &BTreeMap<String, String>, flags: &BTreeMap<String, String>) -> Result<RunConfig> {
        let mut merged = file.clone();
        merged.extend(flags.iter().map(|(k, v)| (k.clone(), v.clone())));
        let mut config = RunConfig::default();
        for (key, value) in &merged {
            config.set(key, value)?;
        }
        config.sync();
        config.validate()?;
        Ok(config)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(std::path::absolute(value).unwrap_or_else(|_| PathBuf::from(value)));
        match key {
            "seed" => self.seed = parse(key, value)?,
            "variant" => self.variant = value.parse()?,
            "radius" => self.radius = parse(key, value)?,
            "history" => self.horizons.history = parse(key, value)?,
            "horizon" => self.horizons.future = parse(key, value)?,
            "threads" => self.threads = Some(parse(key, value)?),
            "out" => self.out = path(),
            "data" => self.data = path(),
            "params" => self.params = path(),
            "log" => self.log = path(),
            "graph_dir" => self.graph_dir = path(),
            "scene" => self.scene = Some(value.to_string()),
            "epochs" => self.train.epochs = parse(key, value)?,
            "lr" => self.train.learning_rate = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "schedule" => self.train.schedule = value.parse::<Schedule>()?,
            "clip_norm" => {
                self.train.clip_norm = if value.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "val_percent" => self.val_percent = parse(key, value)?,
            "scenes" => self.scenario.scenes = parse(key, value)?,
            "pattern" => self.scenario.pattern = value.parse::<MotionPattern>()?,
            "vehicles" => self.scenario.vehicles = parse(key, value)?,
            "vrus" => self.scenario.vrus = parse(key, value)?,
            "map_size" => self.model.map_size = parse(key, value)?,
            "meters_per_pixel" => self.scenario.meters_per_pixel = parse(key, value)?,
            "history_hidden" => self.model.history_hidden = parse(key, value)?,
            "decoder_hidden" => self.model.decoder_hidden = parse(key, value)?,
            "projected" => self.model.projected = parse(key, value)?,
            "interaction_width" => self.model.interaction_width = parse(key, value)?,
            "heads" => self.model.heads = parse(key, value)?,
            "layers" => self.model.layers = parse(key, value)?,
            "map_width" => self.model.map_width = parse(key, value)?,
            "steps_per_second" => self.steps_per_second = parse(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown setting {key:?} (expected one of {})",
                    KEYS.join(", ")
                )))
            }
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Copies the shared settings into the nested library configs.
    fn sync(&mut self) {
        self.train.seed = self.seed;
        self.scenario.horizons = self.horizons;
        self.scenario.radius = self.radius;
        self.scenario.map_size = self.model.map_size;
        self.model.variant = self.variant;
        self.model.horizons = self.horizons;
        self.model.radius = self.radius;
    }

    fn validate(&self) -> Result<()> {
        self.horizons.validate()?;
        self.scenario.validate()?;
        self.train.validate()?;
        self.model.validate()?;
        if self.val_percent >= 100 {
            return Err(Error::Config("val_percent must be below 100".into()));
        }
        if self.steps_per_second == 0 {
            return Err(Error::Config("steps_per_second must be positive".into()));
        }
        Ok(())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }
}
