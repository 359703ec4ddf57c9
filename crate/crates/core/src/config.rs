//! Network configuration: architecture constants and input geometry.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observation window in frames (0.5 s at 10 Hz).
pub const OBS_LEN: usize = 5;
/// Frame rate every processed stream is expected to have.
pub const FRAME_RATE: f64 = 10.0;
/// Number of discrete driver-action codes accepted in place of ego speed.
pub const DRIVER_ACTIONS: usize = 5;
/// Classes of a semantic map raster.
pub const SEMANTIC_CLASSES: usize = 14;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapStrategy {
    Sequential,
    #[default]
    Atrous,
    Multiscale,
}

impl MapStrategy {
    pub const ALL: [MapStrategy; 3] = [Self::Sequential, Self::Atrous, Self::Multiscale];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sequential => "sequential",
            Self::Atrous => "atrous",
            Self::Multiscale => "multiscale",
        }
    }
}

impl fmt::Display for MapStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MapStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Self::Sequential),
            "atrous" => Ok(Self::Atrous),
            "multiscale" | "multi-scale" => Ok(Self::Multiscale),
            other => Err(Error::Config(format!("unknown map strategy `{other}`"))),
        }
    }
}

/// Which kind of dynamics the dataset provides.
///
/// `TwoD` uses image-plane boxes and ego speed (or driver actions); `ThreeD`
/// uses global coordinates for both agents and bird's-eye-view map rasters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputMode {
    #[serde(rename = "2d")]
    TwoD,
    #[default]
    #[serde(rename = "3d")]
    ThreeD,
}

impl InputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TwoD => "2d",
            Self::ThreeD => "3d",
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2d" => Ok(Self::TwoD),
            "3d" => Ok(Self::ThreeD),
            other => Err(Error::Config(format!("unknown mode `{other}` (expected 2d or 3d)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub map_strategy: MapStrategy,
    pub mode: InputMode,
    pub obs_len: usize,
    pub map_size: (usize, usize),
    pub map_channels_per_step: usize,
    pub scene_size: (usize, usize),
    pub scene_channels_per_step: usize,
    pub lstm_hidden: usize,
    pub visual_embed: usize,
    pub penult_dense: usize,
    pub ped_feature_dim: usize,
    pub veh_feature_dim: usize,
    /// Filter counts of the narrow (first) and wide (later) conv layers.
    pub conv_filters: (usize, usize),
    /// Dilation rates of the three atrous layers.
    pub atrous_rates: [usize; 3],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::production(MapStrategy::default())
    }
}

impl ModelConfig {
    /// Full-size network for 3-D data with planar (x, y) coordinates.
    pub fn production(map_strategy: MapStrategy) -> Self {
        Self {
            map_strategy,
            mode: InputMode::ThreeD,
            obs_len: OBS_LEN,
            map_size: (64, 64),
            map_channels_per_step: 3,
            scene_size: (64, 64),
            scene_channels_per_step: 3,
            lstm_hidden: 256,
            visual_embed: 512,
            penult_dense: 256,
            ped_feature_dim: 4,
            veh_feature_dim: 4,
            conv_filters: (32, 64),
            atrous_rates: [1, 2, 4],
        }
    }

    /// Shrunken network small enough for whole-graph finite-difference checks.
    pub fn test_profile(map_strategy: MapStrategy) -> Self {
        Self {
            map_size: (8, 8),
            scene_size: (8, 8),
            lstm_hidden: 4,
            visual_embed: 8,
            penult_dense: 4,
            conv_filters: (2, 3),
            ..Self::production(map_strategy)
        }
    }

    /// Reduced network at 32x32 inputs for experiments that train many
    /// models on one CPU.
    pub fn compact(map_strategy: MapStrategy) -> Self {
        Self {
            map_size: (32, 32),
            scene_size: (32, 32),
            lstm_hidden: 32,
            visual_embed: 64,
            penult_dense: 32,
            conv_filters: (8, 16),
            ..Self::production(map_strategy)
        }
    }

    /// Sets the input mode and the per-step input widths it implies.
    ///
    /// 2-D: 14-class semantic maps, box corners plus displacement, and ego
    /// `[speed, one-hot action]`. 3-D: RGB map rasters and planar global
    /// coordinates plus displacement for both agents.
    pub fn with_mode(mut self, mode: InputMode) -> Self {
        self.mode = mode;
        (self.map_channels_per_step, self.ped_feature_dim, self.veh_feature_dim) = match mode {
            InputMode::TwoD => (SEMANTIC_CLASSES, 8, 1 + DRIVER_ACTIONS),
            InputMode::ThreeD => (3, 4, 4),
        };
        self
    }

    pub fn map_channels(&self) -> usize {
        self.map_channels_per_step * self.obs_len
    }

    pub fn scene_channels(&self) -> usize {
        self.scene_channels_per_step * self.obs_len
    }

    /// Width of the per-step dynamics vector fed to attention.
    pub fn dynamics_width(&self) -> usize {
        2 * self.lstm_hidden
    }

    /// Spatial extent of the encoder outputs (one eighth of the input).
    pub fn feature_size(&self) -> (usize, usize) {
        (self.map_size.0 / 8, self.map_size.1 / 8)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.obs_len == 0 {
            return fail("obs_len must be positive".into());
        }
        for (name, (h, w)) in [("map_size", self.map_size), ("scene_size", self.scene_size)] {
            if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
                return fail(format!("{name} {h}x{w} must be a positive multiple of 8"));
            }
        }
        if self.map_size != self.scene_size {
            return fail(format!(
                "map_size {:?} and scene_size {:?} must agree so encoder outputs can be fused",
                self.map_size, self.scene_size
            ));
        }
        let positives = [
            ("map_channels_per_step", self.map_channels_per_step),
            ("scene_channels_per_step", self.scene_channels_per_step),
            ("lstm_hidden", self.lstm_hidden),
            ("visual_embed", self.visual_embed),
            ("penult_dense", self.penult_dense),
            ("ped_feature_dim", self.ped_feature_dim),
            ("veh_feature_dim", self.veh_feature_dim),
            ("conv_filters.0", self.conv_filters.0),
            ("conv_filters.1", self.conv_filters.1),
        ];
        for (name, v) in positives {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.atrous_rates.contains(&0) {
            return fail("atrous rates must be positive".into());
        }
        Ok(())
    }
}
