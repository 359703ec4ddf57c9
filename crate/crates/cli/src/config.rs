//! Run configuration: defaults, then a TOML file, then command-line flags.
//!
//! ```toml
//! profile = "production"      # production | compact | test
//! map_strategy = "atrous"     # sequential | atrous | multiscale
//! mode = "3d"                 # 2d | 3d
//! seed = 0                    # shared by scenario generation and training
//!
//! [model]                     # any ModelConfig field
//! lstm_hidden = 256
//!
//! [train]                     # any TrainConfig field
//! learning_rate = 5e-5
//!
//! [scenario]                  # any ScenarioConfig field
//! n_tracks = 100
//! label_rule = "joint"
//! ```
//!
//! `profile`, `map_strategy` and `mode` pick the base model; the `[model]`
//! table then overrides individual fields of it.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use pcp_core::config::{InputMode, MapStrategy, ModelConfig};
use pcp_core::synth::ScenarioConfig;
use pcp_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Production,
    Compact,
    Test,
}

impl Profile {
    fn model(self, strategy: MapStrategy) -> ModelConfig {
        match self {
            Self::Production => ModelConfig::production(strategy),
            Self::Compact => ModelConfig::compact(strategy),
            Self::Test => ModelConfig::test_profile(strategy),
        }
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "production" => Ok(Self::Production),
            "compact" => Ok(Self::Compact),
            "test" => Ok(Self::Test),
            other => Err(format!("unknown profile `{other}` (expected production, compact or test)")),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Production => "production",
            Self::Compact => "compact",
            Self::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub map_strategy: MapStrategy,
    pub mode: InputMode,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scenario: ScenarioConfig,
}

/// Values given on the command line; `None` leaves the lower layers alone.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub profile: Option<Profile>,
    pub map_strategy: Option<MapStrategy>,
    pub mode: Option<InputMode>,
    pub seed: Option<u64>,
    pub train: Table,
    pub scenario: Table,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn to_table<T: Serialize>(v: &T) -> Table {
    Table::try_from(v).expect("configuration types serialize to TOML")
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn pick<T: for<'de> Deserialize<'de>>(file: &Table, key: &str) -> Result<Option<T>, CliError> {
    file.get(key)
        .map(|v| v.clone().try_into().map_err(|e| bad(format!("config `{key}`: {e}"))))
        .transpose()
}

fn section(file: &mut Table, key: &str) -> Result<Table, CliError> {
    match file.remove(key) {
        None => Ok(Table::new()),
        Some(Value::Table(t)) => Ok(t),
        Some(_) => Err(bad(format!("config `{key}` must be a table"))),
    }
}

fn build<T: Serialize + for<'de> Deserialize<'de>>(base: &T, layers: [Table; 2], what: &str) -> Result<T, CliError> {
    let mut table = to_table(base);
    for layer in layers {
        merge(&mut table, layer);
    }
    table.try_into().map_err(|e| bad(format!("config [{what}]: {e}")))
}

impl RunConfig {
    /// Merges the optional file and the command-line overrides over the defaults.
    pub fn resolve(file: Option<&Path>, flags: Overrides) -> Result<Self, CliError> {
        let mut file = match file {
            None => Table::new(),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
                text.parse::<Table>().map_err(|e| bad(format!("{}: {e}", path.display())))?
            }
        };
        let mut model_t = section(&mut file, "model")?;
        let train_t = section(&mut file, "train")?;
        let scenario_t = section(&mut file, "scenario")?;
        const TOP: [&str; 4] = ["profile", "map_strategy", "mode", "seed"];
        if let Some(k) = file.keys().find(|k| !TOP.contains(&k.as_str())) {
            return Err(bad(format!("unknown config key `{k}`")));
        }
        for k in ["map_strategy", "mode"] {
            if model_t.remove(k).is_some() {
                return Err(bad(format!("set `{k}` at the top level, not in [model]")));
            }
        }

        let profile = flags.profile.or(pick(&file, "profile")?).unwrap_or_default();
        let map_strategy = flags.map_strategy.or(pick(&file, "map_strategy")?).unwrap_or_default();
        let mode = flags.mode.or(pick(&file, "mode")?).unwrap_or_default();
        let seed = flags.seed.or(pick(&file, "seed")?).unwrap_or(0);

        let model = build(&profile.model(map_strategy).with_mode(mode), [model_t, Table::new()], "model")?;
        let seeded = |mut t: Table| {
            if flags.seed.is_some() || !t.contains_key("seed") {
                t.insert("seed".into(), Value::Integer(seed as i64));
            }
            t
        };
        let train = build(&TrainConfig::default(), [seeded(train_t), flags.train.clone()], "train")?;
        let scenario = build(&ScenarioConfig::default(), [seeded(scenario_t), flags.scenario.clone()], "scenario")?;
        let cfg = Self {
            profile,
            map_strategy,
            mode,
            seed,
            model,
            train,
            scenario,
        };
        cfg.model.validate().map_err(|e| bad(e.to_string()))?;
        cfg.train.validate().map_err(|e| bad(e.to_string()))?;
        cfg.scenario.validate().map_err(|e| bad(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration types serialize to TOML")
    }
}
