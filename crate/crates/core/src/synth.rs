//! Deterministic synthetic street scenes with a controllable crossing rule.
//!
//! The world is a straight road along the x axis (centreline `y = 0`) with
//! pedestrians starting on the `y > 0` sidewalk and the ego vehicle driving
//! in `+x`. Each track carries three independent latent attributes: whether
//! the pedestrian walks toward the road, whether a crosswalk lies near them,
//! and which way their body faces. The label rule picks which attributes
//! decide the label, so a modality carries label information only when the
//! rule reads its attribute.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use pcp_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    write_dataset, write_raw, CameraMeta, CrossingLabel, EgoMotion, FrameRecord, ImageRef, ImageStore, RasterEncoding,
    RawBody, RawDtype, RawImage, Track, FORMAT_VERSION,
};
use crate::error::{Error, Result};

pub const ROAD_HALF_WIDTH: f64 = 3.5;
/// Toward-road walking speed (m/s) above which a pedestrian counts as approaching.
pub const TOWARD_SPEED: f64 = 0.55;
/// Longitudinal distance (m) within which a crosswalk counts as near.
pub const CROSSWALK_RADIUS: f64 = 4.0;
/// Frame at which pedestrian-to-crosswalk distance is measured.
pub const PROBE_FRAME: usize = 4;
const CROSSWALK_HALF_WIDTH: f64 = 1.5;
const STRIPE: f64 = 1.0;
const PED_DOT: f64 = 0.8;
const EGO_DOT: f64 = 1.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Walking toward the road.
    PedMotionOnly,
    /// Crosswalk near the pedestrian.
    MapDependent,
    /// Facing the road.
    SceneDependent,
    /// Walking toward the road and a crosswalk near.
    Joint,
}

impl LabelRule {
    pub const ALL: [Self; 4] = [Self::PedMotionOnly, Self::MapDependent, Self::SceneDependent, Self::Joint];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PedMotionOnly => "ped_motion_only",
            Self::MapDependent => "map_dependent",
            Self::SceneDependent => "scene_dependent",
            Self::Joint => "joint",
        }
    }

    pub fn label(self, a: &Attributes) -> bool {
        match self {
            Self::PedMotionOnly => a.toward,
            Self::MapDependent => a.crosswalk_near,
            Self::SceneDependent => a.facing_road,
            Self::Joint => a.toward && a.crosswalk_near,
        }
    }

    /// Attributes with the given clean label; the rest are drawn evenly.
    fn draw(self, label: bool, rng: &mut ChaCha8Rng) -> Attributes {
        let mut a = Attributes {
            toward: rng.gen_bool(0.5),
            crosswalk_near: rng.gen_bool(0.5),
            facing_road: rng.gen_bool(0.5),
        };
        match self {
            Self::PedMotionOnly => a.toward = label,
            Self::MapDependent => a.crosswalk_near = label,
            Self::SceneDependent => a.facing_road = label,
            Self::Joint => {
                (a.toward, a.crosswalk_near) = if label {
                    (true, true)
                } else {
                    *[(true, false), (false, true), (false, false)].choose(rng).expect("nonempty")
                }
            }
        }
        a
    }
}

impl fmt::Display for LabelRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown label rule `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Attributes {
    pub toward: bool,
    pub crosswalk_near: bool,
    pub facing_road: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_tracks: usize,
    pub seed: u64,
    pub label_rule: LabelRule,
    /// Probability of flipping each label.
    pub noise_level: f64,
    pub frame_rate: f64,
    /// Side of the square map window, metres.
    pub world_extent: f64,
    /// Fraction of tracks whose clean label is positive.
    pub positive_fraction: f64,
    /// Accepted range of the final positive fraction.
    pub balance: (f64, f64),
    pub map_pixels: usize,
    pub camera: (u32, u32),
    /// Inclusive frame-count range per track.
    pub track_frames: (usize, usize),
    /// Directory, relative to the dataset file, holding the image sidecars.
    pub asset_dir: String,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_tracks: 100,
            seed: 0,
            label_rule: LabelRule::Joint,
            noise_level: 0.05,
            frame_rate: 10.0,
            world_extent: 30.0,
            positive_fraction: 0.5,
            balance: (0.4, 0.6),
            map_pixels: 64,
            camera: (80, 60),
            track_frames: (15, 17),
            asset_dir: "assets".into(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.n_tracks == 0 {
            return fail("n_tracks must be positive");
        }
        if !(0.0..0.5).contains(&self.noise_level) {
            return fail("noise_level must lie in [0, 0.5)");
        }
        if !(self.frame_rate > 0.0) || !(self.world_extent > 0.0) || self.map_pixels == 0 {
            return fail("frame_rate, world_extent and map_pixels must be positive");
        }
        if self.camera.0 < 48 || self.camera.1 < 48 {
            return fail("camera extents must be at least 48x48 to fit a pedestrian box");
        }
        let (lo, hi) = self.track_frames;
        if lo < 2 || lo > hi {
            return fail("track_frames must be an ordered range starting at 2 or more");
        }
        if lo <= PROBE_FRAME {
            return fail("tracks must be longer than the crosswalk probe frame");
        }
        let (blo, bhi) = self.balance;
        if !(0.0 <= blo && blo <= bhi && bhi <= 1.0) {
            return fail("balance must be an ordered range within [0, 1]");
        }
        // expected positive fraction after symmetric label flips
        let p = self.positive_fraction;
        let expected = p * (1.0 - self.noise_level) + (1.0 - p) * self.noise_level;
        if !(0.0..=1.0).contains(&p) || expected < blo || expected > bhi {
            return Err(Error::Config(format!(
                "class balance infeasible: expected positive fraction {expected:.3} outside [{blo}, {bhi}]"
            )));
        }
        Ok(())
    }
}

/// A generated dataset held in memory.
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub config: ScenarioConfig,
    pub tracks: Vec<Track>,
    /// Latent attributes per track, before label noise.
    pub attributes: Vec<Attributes>,
    /// Sidecar images keyed by their path relative to the dataset file.
    pub images: BTreeMap<String, RawImage>,
}

impl SynthDataset {
    pub fn positive_fraction(&self) -> f64 {
        let pos = self.tracks.iter().filter(|t| t.label == CrossingLabel::Crossing).count();
        pos as f64 / self.tracks.len() as f64
    }

    /// Writes the dataset file and its sidecars next to it.
    pub fn write(&self, path: &Path) -> Result<()> {
        let root = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => std::path::PathBuf::from("."),
        };
        let assets = root.join(&self.config.asset_dir);
        std::fs::create_dir_all(&assets).map_err(|e| Error::io(&assets, e))?;
        for (rel, img) in &self.images {
            let bytes: Vec<u8> = img.values.data().iter().map(|&v| v as u8).collect();
            write_raw(&root.join(rel), img.values.shape(), RawBody::U8(&bytes))?;
        }
        write_dataset(path, &self.tracks)
    }

    /// An image store serving the in-memory sidecars as if read from `root`.
    pub fn image_store(&self, root: impl Into<std::path::PathBuf>) -> ImageStore {
        let mut store = ImageStore::new(root);
        for (rel, img) in &self.images {
            store.preload(rel, img.clone());
        }
        store
    }
}

struct Kinematics {
    ped: Vec<[f64; 2]>,
    ego: Vec<[f64; 2]>,
    ego_speed: f64,
    crosswalk_x: Option<f64>,
}

fn simulate(a: &Attributes, frames: usize, dt: f64, rng: &mut ChaCha8Rng) -> Kinematics {
    let ego_speed = rng.gen_range(2.0..5.0);
    let ego0 = [rng.gen_range(-5.0..5.0), -ROAD_HALF_WIDTH / 2.0];
    let ped0 = [ego0[0] + rng.gen_range(9.0..13.0), rng.gen_range(4.5..6.5)];
    let vy = if a.toward {
        -rng.gen_range(1.0..1.8)
    } else {
        rng.gen_range(-0.1..0.5)
    };
    let vx0 = rng.gen_range(-0.8..0.8);
    let ax = rng.gen_range(-0.6..0.6);
    let ped: Vec<[f64; 2]> = (0..frames)
        .map(|i| {
            let t = i as f64 * dt;
            [ped0[0] + vx0 * t + 0.5 * ax * t * t, ped0[1] + vy * t]
        })
        .collect();
    let ego = (0..frames)
        .map(|i| [ego0[0] + ego_speed * i as f64 * dt, ego0[1]])
        .collect();
    let anchor = ped[PROBE_FRAME][0];
    let crosswalk_x = if a.crosswalk_near {
        Some(anchor + rng.gen_range(-3.0..3.0))
    } else if rng.gen_bool(0.5) {
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        Some(anchor + side * rng.gen_range(8.0..12.0))
    } else {
        None
    };
    Kinematics {
        ped,
        ego,
        ego_speed,
        crosswalk_x,
    }
}

/// `[3, n, n]` ego-centred raster: road band, crosswalk stripes, agent dots.
fn render_map(k: &Kinematics, frame: usize, extent: f64, n: usize) -> Vec<u8> {
    let res = extent / n as f64;
    let [ex, ey] = k.ego[frame];
    let [px, py] = k.ped[frame];
    let mut out = vec![0u8; 3 * n * n];
    for r in 0..n {
        let y = ey + (n as f64 / 2.0 - r as f64 - 0.5) * res;
        for c in 0..n {
            let x = ex + (c as f64 + 0.5 - n as f64 / 2.0) * res;
            let p = r * n + c;
            let on_road = y.abs() <= ROAD_HALF_WIDTH;
            if on_road {
                out[p] = 255;
            }
            if let Some(cx) = k.crosswalk_x {
                let stripe = ((y + ROAD_HALF_WIDTH) / STRIPE).floor() as i64 % 2 == 0;
                if on_road && (x - cx).abs() <= CROSSWALK_HALF_WIDTH && stripe {
                    out[n * n + p] = 255;
                }
            }
            if (x - px).hypot(y - py) <= PED_DOT {
                out[2 * n * n + p] = 255;
            } else if (x - ex).hypot(y - ey) <= EGO_DOT {
                out[2 * n * n + p] = 128;
            }
        }
    }
    out
}

/// Recovers "crosswalk near" from a rendered raster: the pedestrian dot's
/// column against the nearest crosswalk column, converted to metres.
pub fn probe_crosswalk_near(map: &Tensor, extent: f64) -> Option<bool> {
    let &[3, h, w] = map.shape() else { return None };
    let d = map.data();
    let cols = |ch: usize, pred: &dyn Fn(f64) -> bool| -> Vec<usize> {
        (0..h * w).filter(|&p| pred(d[ch * h * w + p])).map(|p| p % w).collect()
    };
    let ped = cols(2, &|v| v > 0.9);
    if ped.is_empty() {
        return None;
    }
    let ped_col = ped.iter().sum::<usize>() as f64 / ped.len() as f64;
    let crosswalk = cols(1, &|v| v > 0.5);
    let res = extent / w as f64;
    Some(
        crosswalk
            .iter()
            .any(|&c| (c as f64 - ped_col).abs() * res <= CROSSWALK_RADIUS + CROSSWALK_HALF_WIDTH / 2.0),
    )
}

struct Appearance {
    base: f64,
    box_h: f64,
    box_top: f64,
    facing: bool,
}

/// Camera pixel box of the pedestrian: column from the longitudinal offset
/// to the ego vehicle; row and size fixed per track.
fn camera_box(k: &Kinematics, frame: usize, look: &Appearance, cam: (u32, u32)) -> [f64; 4] {
    let (w, _) = (f64::from(cam.0), f64::from(cam.1));
    let bw = look.box_h * 0.45;
    let rel = k.ped[frame][0] - k.ego[frame][0];
    let x1 = (w / 2.0 + (rel - 9.0) * 2.5).clamp(2.0, w - bw - 2.0);
    [x1, look.box_top, x1 + bw, look.box_top + look.box_h]
}

fn render_scene(box2d: [f64; 4], look: &Appearance, cam: (u32, u32), rng: &mut ChaCha8Rng) -> Vec<u8> {
    let (w, h) = (cam.0 as usize, cam.1 as usize);
    let mut out = vec![0u8; 3 * w * h];
    let [x1, y1, x2, y2] = box2d;
    for r in 0..h {
        for c in 0..w {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            let inside = x >= x1 && x < x2 && y >= y1 && y < y2;
            let rgb = if inside {
                // facing the road: warm horizontal bands; away: cool vertical bands
                let (band, warm) = if look.facing {
                    (((y - y1) / 3.0).floor() as i64 % 2 == 0, true)
                } else {
                    (((x - x1) / 3.0).floor() as i64 % 2 == 0, false)
                };
                let hi = if band { 0.9 } else { 0.45 };
                if warm {
                    [hi, 0.3, 0.2]
                } else {
                    [0.2, 0.3, hi]
                }
            } else {
                let v = (look.base + rng.gen_range(-0.08..0.08)).clamp(0.0, 1.0);
                [v, v, v]
            };
            for (ch, v) in rgb.into_iter().enumerate() {
                out[ch * w * h + r * w + c] = (v * 255.0).round() as u8;
            }
        }
    }
    out
}

/// Builds the whole dataset in memory.
pub fn generate(config: &ScenarioConfig) -> Result<SynthDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_tracks;
    let n_pos = (n as f64 * config.positive_fraction).round() as usize;
    let mut clean: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
    clean.shuffle(&mut rng);
    let dt = 1.0 / config.frame_rate;
    let px = config.map_pixels;
    let (cw, ch) = (config.camera.0 as usize, config.camera.1 as usize);

    let mut tracks = Vec::with_capacity(n);
    let mut attributes = Vec::with_capacity(n);
    let mut images = BTreeMap::new();
    for (i, &label) in clean.iter().enumerate() {
        let a = config.label_rule.draw(label, &mut rng);
        debug_assert_eq!(config.label_rule.label(&a), label);
        let frames = rng.gen_range(config.track_frames.0..=config.track_frames.1);
        let k = simulate(&a, frames, dt, &mut rng);
        let look = Appearance {
            base: rng.gen_range(0.3..0.6),
            box_h: rng.gen_range(22.0..30.0),
            box_top: rng.gen_range(8.0..(ch as f64 - 32.0).max(9.0)),
            facing: a.facing_road,
        };
        let observed = if rng.gen_bool(config.noise_level) { !label } else { label };

        let track_id = format!("synth-{:05}", i);
        let map_path = format!("{}/{track_id}_map.rawt", config.asset_dir);
        let scene_path = format!("{}/{track_id}_scene.rawt", config.asset_dir);
        let mut map_bytes = Vec::with_capacity(frames * 3 * px * px);
        let mut scene_bytes = Vec::with_capacity(frames * 3 * cw * ch);
        let mut records = Vec::with_capacity(frames);
        for f in 0..frames {
            map_bytes.extend(render_map(&k, f, config.world_extent, px));
            let box2d = camera_box(&k, f, &look, config.camera);
            scene_bytes.extend(render_scene(box2d, &look, config.camera, &mut rng));
            let reference = |path: &str| ImageRef {
                path: path.to_string(),
                index: Some(f),
                encoding: RasterEncoding::Intensity,
            };
            records.push(FrameRecord {
                time: f as f64 * dt,
                box2d,
                ped_global: Some(k.ped[f].to_vec()),
                ego_global: Some(k.ego[f].to_vec()),
                ego_speed: Some(EgoMotion::Speed(k.ego_speed)),
                map_raster: Some(reference(&map_path)),
                scene_image: Some(reference(&scene_path)),
            });
        }
        let to_image = |dims: Vec<usize>, bytes: Vec<u8>| RawImage {
            dtype: RawDtype::U8,
            values: Tensor::new(dims, bytes.into_iter().map(f64::from).collect()).expect("sized buffer"),
        };
        images.insert(map_path, to_image(vec![frames, 3, px, px], map_bytes));
        images.insert(scene_path, to_image(vec![frames, 3, ch, cw], scene_bytes));
        tracks.push(Track {
            format_version: FORMAT_VERSION,
            track_id,
            frame_rate: config.frame_rate,
            label: if observed {
                CrossingLabel::Crossing
            } else {
                CrossingLabel::NotCrossing
            },
            crossing_frame: observed.then_some(frames - 1),
            camera_meta: CameraMeta {
                width: config.camera.0,
                height: config.camera.1,
            },
            frames: records,
        });
        attributes.push(a);
    }
    let ds = SynthDataset {
        config: config.clone(),
        tracks,
        attributes,
        images,
    };
    let frac = ds.positive_fraction();
    if frac < config.balance.0 || frac > config.balance.1 {
        return Err(Error::Config(format!(
            "generated positive fraction {frac:.3} outside [{}, {}]; adjust the seed or bounds",
            config.balance.0, config.balance.1
        )));
    }
    Ok(ds)
}

/// Toward-road speed implied by the first `PROBE_FRAME + 1` emitted positions.
pub fn toward_speed(track: &Track) -> Option<f64> {
    let y0 = track.frames.first()?.ped_global.as_ref()?.get(1).copied()?;
    let f = track.frames.get(PROBE_FRAME)?;
    let y1 = f.ped_global.as_ref()?.get(1).copied()?;
    Some(-(y1 - y0) / (f.time - track.frames[0].time))
}
