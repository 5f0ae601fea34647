mod commands;
mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use heatnet::Error;

use config::{read_config_file, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "heatnet", version, about = "Multi-agent trajectory prediction with heterogeneous graph attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)] // parsed once
enum Command {
    /// Write a synthetic dataset (scene CSV plus map rasters).
    Gen {
        #[command(flatten)]
        shared: Shared,
        /// Number of scenes.
        #[arg(long)]
        scenes: Option<String>,
        /// constant_velocity, circular_arc, lane_change, mixed or yielding.
        #[arg(long)]
        pattern: Option<String>,
        #[arg(long)]
        vehicles: Option<String>,
        /// Pedestrians and cyclists per scene.
        #[arg(long)]
        vrus: Option<String>,
        #[arg(long)]
        map_size: Option<String>,
        #[arg(long)]
        meters_per_pixel: Option<String>,
    },
    /// Train a model and write its parameters and a JSON-lines log.
    Train {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        epochs: Option<String>,
        #[arg(long)]
        lr: Option<String>,
        #[arg(long)]
        batch_size: Option<String>,
        /// constant or cosine.
        #[arg(long)]
        schedule: Option<String>,
        /// Global gradient norm limit, or "none".
        #[arg(long)]
        clip_norm: Option<String>,
        /// Percentage of scenes held out for validation.
        #[arg(long)]
        val_percent: Option<String>,
        /// Training log path (defaults to the output path with a .jsonl extension).
        #[arg(long)]
        log: Option<String>,
        #[arg(long)]
        history_hidden: Option<String>,
        #[arg(long)]
        decoder_hidden: Option<String>,
        #[arg(long)]
        projected: Option<String>,
        #[arg(long)]
        interaction_width: Option<String>,
        #[arg(long)]
        heads: Option<String>,
        #[arg(long)]
        layers: Option<String>,
        #[arg(long)]
        map_size: Option<String>,
        #[arg(long)]
        map_width: Option<String>,
    },
    /// Report ADE, FDE and per-second RMSE as JSON.
    Eval {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        params: Option<String>,
        #[arg(long)]
        steps_per_second: Option<String>,
    },
    /// Write predicted trajectories as CSV in local and global coordinates.
    Predict {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        params: Option<String>,
        /// Only predict this scene.
        #[arg(long)]
        scene: Option<String>,
        /// Also write each sample's interaction graph as an edge-list CSV here.
        #[arg(long)]
        graph_dir: Option<String>,
    },
    /// Finite-difference check of every gradient on a small random model.
    Gradcheck {
        #[command(flatten)]
        shared: Shared,
        /// Corrupt the tanh backward rule by this factor (negative control).
        #[arg(long, hide = true)]
        fault_tanh_scale: Option<f64>,
    },
}

#[derive(Debug, Args)]
struct Shared {
    /// key = value settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    /// R, GAT, GAT-R, HEAT, HEAT-R or HEAT-I-R.
    #[arg(long)]
    variant: Option<String>,
    /// Interaction radius in meters.
    #[arg(long)]
    radius: Option<String>,
    /// Traceback horizon in steps.
    #[arg(long)]
    history: Option<String>,
    /// Prediction horizon in steps.
    #[arg(long)]
    horizon: Option<String>,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<String>,
    /// Output path.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Scene CSV; maps are read from maps/ beside it.
    #[arg(long)]
    data: Option<String>,
}

type Flags = BTreeMap<String, String>;

fn put(flags: &mut Flags, key: &str, value: &Option<String>) {
    if let Some(v) = value {
        flags.insert(key.to_string(), v.clone());
    }
}

impl Shared {
    fn collect(&self, flags: &mut Flags) {
        put(flags, "seed", &self.seed);
        put(flags, "variant", &self.variant);
        put(flags, "radius", &self.radius);
        put(flags, "history", &self.history);
        put(flags, "horizon", &self.horizon);
        put(flags, "threads", &self.threads);
        put(flags, "out", &self.out);
    }
}

impl Command {
    fn shared(&self) -> &Shared {
        match self {
            Command::Gen { shared, .. }
            | Command::Train { shared, .. }
            | Command::Eval { shared, .. }
            | Command::Predict { shared, .. }
            | Command::Gradcheck { shared, .. } => shared,
        }
    }

    fn flags(&self) -> Flags {
        let mut f = Flags::new();
        self.shared().collect(&mut f);
        match self {
            Command::Gen {
                scenes,
                pattern,
                vehicles,
                vrus,
                map_size,
                meters_per_pixel,
                ..
            } => {
                put(&mut f, "scenes", scenes);
                put(&mut f, "pattern", pattern);
                put(&mut f, "vehicles", vehicles);
                put(&mut f, "vrus", vrus);
                put(&mut f, "map_size", map_size);
                put(&mut f, "meters_per_pixel", meters_per_pixel);
            }
            Command::Train {
                data,
                epochs,
                lr,
                batch_size,
                schedule,
                clip_norm,
                val_percent,
                log,
                history_hidden,
                decoder_hidden,
                projected,
                interaction_width,
                heads,
                layers,
                map_size,
                map_width,
                ..
            } => {
                put(&mut f, "data", &data.data);
                put(&mut f, "epochs", epochs);
                put(&mut f, "lr", lr);
                put(&mut f, "batch_size", batch_size);
                put(&mut f, "schedule", schedule);
                put(&mut f, "clip_norm", clip_norm);
                put(&mut f, "val_percent", val_percent);
                put(&mut f, "log", log);
                put(&mut f, "history_hidden", history_hidden);
                put(&mut f, "decoder_hidden", decoder_hidden);
                put(&mut f, "projected", projected);
                put(&mut f, "interaction_width", interaction_width);
                put(&mut f, "heads", heads);
                put(&mut f, "layers", layers);
                put(&mut f, "map_size", map_size);
                put(&mut f, "map_width", map_width);
            }
            Command::Eval {
                data,
                params,
                steps_per_second,
                ..
            } => {
                put(&mut f, "data", &data.data);
                put(&mut f, "params", params);
                put(&mut f, "steps_per_second", steps_per_second);
            }
            Command::Predict {
                data,
                params,
                scene,
                graph_dir,
                ..
            } => {
                put(&mut f, "data", &data.data);
                put(&mut f, "params", params);
                put(&mut f, "scene", scene);
                put(&mut f, "graph_dir", graph_dir);
            }
            Command::Gradcheck { .. } => {}
        }
        f
    }
}

fn run(cli: &Cli) -> heatnet::Result<bool> {
    let file = match &cli.command.shared().config {
        Some(path) => read_config_file(path)?,
        None => BTreeMap::new(),
    };
    let config = RunConfig::resolve(&file, &cli.command.flags())?;
    if let Some(n) = config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Gen { .. } => commands::gen(&config).map(|()| true),
        Command::Train { .. } => commands::train(&config).map(|()| true),
        Command::Eval { .. } => commands::eval(&config).map(|()| true),
        Command::Predict { .. } => commands::predict(&config).map(|()| true),
        Command::Gradcheck { fault_tanh_scale, .. } => commands::gradcheck(&config, *fault_tanh_scale),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HEATNET_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
