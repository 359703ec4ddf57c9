//! `pcp`: dataset generation, preparation, training, evaluation, prediction,
//! interpolation and ablation from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcp_core::config::{InputMode, MapStrategy};
use thiserror::Error;

use config::{Overrides, Profile, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] pcp_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Core(pcp_core::Error::Config(_)) => 2,
            Self::Core(e) if e.is_validation() => 3,
            Self::Core(pcp_core::Error::Checkpoint(_)) => 3,
            Self::Core(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pcp", version, about = "Pedestrian crossing prediction experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file of the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_with::<MapStrategy>)]
    map_strategy: Option<MapStrategy>,
    #[arg(long, global = true, value_parser = parse_with::<InputMode>)]
    mode: Option<InputMode>,
    /// Model size: production, compact or test.
    #[arg(long, global = true)]
    profile: Option<Profile>,
}

fn parse_with<T: std::str::FromStr<Err = pcp_core::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: pcp_core::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset and its image sidecars.
    Generate {
        #[arg(long)]
        tracks: Option<usize>,
        /// ped_motion_only, map_dependent, scene_dependent or joint.
        #[arg(long)]
        rule: Option<String>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Turn a dataset into a prepared sample file.
    Prepare { dataset: PathBuf },
    /// Train a model and write its checkpoint.
    Train {
        /// Dataset or prepared sample file.
        data: PathBuf,
        /// Held-out data reported after every epoch.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Subset of map, scene, ped and veh joined by `+`, or `all`.
        #[arg(long, default_value = "all")]
        modalities: String,
        /// Train the trajectory-only reference model instead.
        #[arg(long)]
        baseline: bool,
        /// Also write the per-epoch log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Metrics of a checkpoint on a dataset.
    Eval { checkpoint: PathBuf, data: PathBuf },
    /// Per-sample crossing probabilities.
    Predict { checkpoint: PathBuf, data: PathBuf },
    /// Upsample keyframed tracks by linear interpolation.
    Interpolate {
        input: PathBuf,
        /// Output frames per input frame interval (2 Hz to 10 Hz is 5).
        #[arg(long, default_value_t = 5)]
        factor: usize,
    },
    /// Train one masked model per modality subset and compare them.
    Ablate {
        train: PathBuf,
        held_out: PathBuf,
        /// Comma-separated subsets; defaults to the standard five.
        #[arg(long, value_delimiter = ',')]
        subsets: Vec<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
}

fn overrides(common: &Common, command: &Command) -> Overrides {
    use toml::Value;
    let mut o = Overrides {
        profile: common.profile,
        map_strategy: common.map_strategy,
        mode: common.mode,
        seed: common.seed,
        ..Default::default()
    };
    fn put(t: &mut toml::Table, k: &str, v: Option<Value>) {
        if let Some(v) = v {
            t.insert(k.into(), v);
        }
    }
    match command {
        Command::Generate { tracks, rule, noise } => {
            put(&mut o.scenario, "n_tracks", tracks.map(|n| Value::Integer(n as i64)));
            put(&mut o.scenario, "label_rule", rule.clone().map(Value::String));
            put(&mut o.scenario, "noise_level", noise.map(Value::Float));
        }
        Command::Train {
            epochs, lr, batch_size, ..
        } => {
            put(&mut o.train, "epochs", epochs.map(|n| Value::Integer(n as i64)));
            put(&mut o.train, "learning_rate", lr.map(Value::Float));
            put(&mut o.train, "batch_size", batch_size.map(|n| Value::Integer(n as i64)));
        }
        Command::Ablate { epochs, lr, .. } => {
            put(&mut o.train, "epochs", epochs.map(|n| Value::Integer(n as i64)));
            put(&mut o.train, "learning_rate", lr.map(Value::Float));
        }
        _ => {}
    }
    o
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(cli.common.config.as_deref(), overrides(&cli.common, &cli.command))?;
    eprintln!("# effective configuration\n{}", cfg.to_toml());
    let out = cli.common.out.as_deref();
    let explicit_mode = cli.common.mode.is_some();
    match cli.command {
        Command::Generate { .. } => commands::generate(&cfg, out),
        Command::Prepare { dataset } => commands::prepare(&cfg, &dataset, out),
        Command::Train {
            data,
            val,
            modalities,
            baseline,
            log,
            ..
        } => commands::train(&cfg, &data, val.as_deref(), &modalities, baseline, log.as_deref(), out),
        Command::Eval { checkpoint, data } => commands::eval(&cfg, explicit_mode, &checkpoint, &data, out),
        Command::Predict { checkpoint, data } => commands::predict(&cfg, explicit_mode, &checkpoint, &data, out),
        Command::Interpolate { input, factor } => commands::interpolate(&cfg, &input, factor, out),
        Command::Ablate {
            train,
            held_out,
            subsets,
            ..
        } => commands::ablate(&cfg, &train, &held_out, &subsets, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.exit_code() == 2 {
                eprintln!("run `pcp --help` for usage");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
