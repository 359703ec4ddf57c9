use serde::{Deserialize, Serialize};

use pcp_tensor::Tensor;

use crate::config::{InputMode, DRIVER_ACTIONS};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingLabel {
    Crossing,
    NotCrossing,
}

impl CrossingLabel {
    pub fn as_u8(self) -> u8 {
        match self {
            Self::Crossing => 1,
            Self::NotCrossing => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CameraMeta {
    pub width: u32,
    pub height: u32,
}

/// Ego-vehicle state of a 2-D record: a speed in m/s or a driver-action code.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EgoMotion {
    Speed(f64),
    Action { action: u8 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RasterEncoding {
    /// 8-bit intensities scaled to [0, 1] (or 64-bit values taken as is).
    #[default]
    Intensity,
    /// Single-channel class ids, expanded to one channel per class.
    ClassIds,
}

impl RasterEncoding {
    fn is_default(&self) -> bool {
        *self == Self::default()
    }
}

/// Reference to imagery stored next to the dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    /// Path relative to the dataset file's directory.
    pub path: String,
    /// Frame index into a multi-frame sidecar (`[F, C, H, W]`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(default, skip_serializing_if = "RasterEncoding::is_default")]
    pub encoding: RasterEncoding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub time: f64,
    /// `[x1, y1, x2, y2]`: top-left and bottom-right corners in pixels.
    pub box2d: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ped_global: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ego_global: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ego_speed: Option<EgoMotion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_raster: Option<ImageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_image: Option<ImageRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub format_version: u32,
    pub track_id: String,
    pub frame_rate: f64,
    pub label: CrossingLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossing_frame: Option<usize>,
    pub camera_meta: CameraMeta,
    pub frames: Vec<FrameRecord>,
}

impl Track {
    /// Index of the crossing event, or of the last frame when no crossing occurs.
    pub fn event_frame(&self) -> usize {
        self.crossing_frame.unwrap_or(self.frames.len().saturating_sub(1))
    }

    /// Structural invariants plus the per-mode field requirements.
    pub fn validate(&self, record: usize, mode: InputMode) -> Result<()> {
        let err = |field: &str, reason: String| Err(Error::schema(record, field, reason));
        if self.format_version != FORMAT_VERSION {
            return err(
                "format_version",
                format!("unsupported version {} (expected {FORMAT_VERSION})", self.format_version),
            );
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return err("frame_rate", format!("must be positive, found {}", self.frame_rate));
        }
        if self.frames.is_empty() {
            return err("frames", "track has no frames".into());
        }
        if self.camera_meta.width == 0 || self.camera_meta.height == 0 {
            return err("camera_meta", "image extents must be positive".into());
        }
        match (self.label, self.crossing_frame) {
            (CrossingLabel::Crossing, None) => return err("crossing_frame", "crossing track without a crossing frame".into()),
            (CrossingLabel::NotCrossing, Some(_)) => {
                return err("crossing_frame", "non-crossing track with a crossing frame".into())
            }
            (_, Some(f)) if f >= self.frames.len() => {
                return err("crossing_frame", format!("frame {f} outside 0..{}", self.frames.len()))
            }
            _ => {}
        }
        for (i, pair) in self.frames.windows(2).enumerate() {
            if !(pair[1].time > pair[0].time) {
                return err("time", format!("frame {} is not after frame {i}", i + 1));
            }
        }
        for (i, f) in self.frames.iter().enumerate() {
            let [x1, y1, x2, y2] = f.box2d;
            if !(x1 < x2 && y1 < y2) || f.box2d.iter().any(|v| !v.is_finite()) {
                return err("box2d", format!("frame {i}: degenerate box {:?}", f.box2d));
            }
            match mode {
                InputMode::TwoD => match f.ego_speed {
                    None => return err("ego_speed", format!("frame {i}: required in 2d mode")),
                    Some(EgoMotion::Action { action }) if usize::from(action) >= DRIVER_ACTIONS => {
                        return err("ego_speed", format!("frame {i}: action code {action} out of range"))
                    }
                    _ => {}
                },
                InputMode::ThreeD => {
                    for (field, value) in [("ped_global", &f.ped_global), ("ego_global", &f.ego_global)] {
                        match value {
                            None => return err(field, format!("frame {i}: required in 3d mode")),
                            Some(v) if !(2..=3).contains(&v.len()) => {
                                return err(field, format!("frame {i}: expected 2 or 3 coordinates"))
                            }
                            _ => {}
                        }
                    }
                    if f.map_raster.is_none() {
                        return err("map_raster", format!("frame {i}: required in 3d mode"));
                    }
                }
            }
        }
        if mode == InputMode::ThreeD {
            let dims = |get: fn(&FrameRecord) -> &Option<Vec<f64>>| {
                self.frames.iter().map(|f| get(f).as_ref().map_or(0, Vec::len)).collect::<Vec<_>>()
            };
            for (field, d) in [("ped_global", dims(|f| &f.ped_global)), ("ego_global", dims(|f| &f.ego_global))] {
                if d.windows(2).any(|w| w[0] != w[1]) {
                    return err(field, "coordinate dimension changes within the track".into());
                }
            }
        }
        Ok(())
    }
}

/// One fixed-length multi-modal model input.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSample {
    pub track_id: String,
    /// Ordinal of this window within its track.
    pub window: usize,
    /// Track frame index of the last observed frame.
    pub last_frame: usize,
    /// `[C_map * obs_len, H, W]`, oldest step first.
    pub map_stack: Tensor,
    /// `[3 * obs_len, H, W]`, oldest step first.
    pub scene_stack: Tensor,
    /// Per step: coordinates followed by displacement from the first step.
    pub ped_motion: Vec<Vec<f64>>,
    pub veh_motion: Vec<Vec<f64>>,
    pub label: u8,
    /// Seconds from the last observed frame to the event.
    pub tte: f64,
}
