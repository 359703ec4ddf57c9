//! Assembly of model inputs from validated tracks.

use pcp_tensor::Tensor;

use super::pipeline::{clip_track, compute_velocity, crop_box, sample_windows, stack_channels, Window};
use super::raster::{resample_region, resize, ImageStore};
use super::types::{EgoMotion, FrameRecord, ObservationSample, Track};
use crate::config::{InputMode, ModelConfig, DRIVER_ACTIONS};
use crate::error::{Error, Result};

/// Input geometry a sample must be built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrepareOptions {
    pub mode: InputMode,
    pub map_size: (usize, usize),
    pub map_channels_per_step: usize,
    pub scene_size: (usize, usize),
    /// Coordinates per 3-D position (2 = planar); ignored in 2-D mode.
    pub coord_dim: usize,
}

impl PrepareOptions {
    pub fn from_config(c: &ModelConfig) -> Self {
        Self {
            mode: c.mode,
            map_size: c.map_size,
            map_channels_per_step: c.map_channels_per_step,
            scene_size: c.scene_size,
            coord_dim: c.ped_feature_dim / 2,
        }
    }
}

fn ped_coords(track: &Track, f: &FrameRecord, opts: &PrepareOptions) -> Result<Vec<f64>> {
    match opts.mode {
        InputMode::TwoD => {
            let (w, h) = (f64::from(track.camera_meta.width), f64::from(track.camera_meta.height));
            let [x1, y1, x2, y2] = f.box2d;
            Ok(vec![x1 / w, y1 / h, x2 / w, y2 / h])
        }
        InputMode::ThreeD => global(track, f.ped_global.as_deref(), "ped_global", opts.coord_dim),
    }
}

fn global(track: &Track, v: Option<&[f64]>, field: &str, dim: usize) -> Result<Vec<f64>> {
    match v {
        Some(v) if v.len() >= dim => Ok(v[..dim].to_vec()),
        _ => Err(Error::Data(format!(
            "track {}: `{field}` needs at least {dim} coordinates",
            track.track_id
        ))),
    }
}

/// 2-D ego features: `[speed, one-hot action]`; the unused part is zero.
fn ego_features(track: &Track, f: &FrameRecord) -> Result<Vec<f64>> {
    let mut v = vec![0.0; 1 + DRIVER_ACTIONS];
    match f.ego_speed {
        Some(EgoMotion::Speed(s)) => v[0] = s,
        Some(EgoMotion::Action { action }) if usize::from(action) < DRIVER_ACTIONS => v[1 + usize::from(action)] = 1.0,
        _ => return Err(Error::Data(format!("track {}: missing or invalid ego_speed", track.track_id))),
    }
    Ok(v)
}

fn with_velocity(coords: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let vel = compute_velocity(&coords);
    coords
        .into_iter()
        .zip(vel)
        .map(|(mut c, v)| {
            c.extend(v);
            c
        })
        .collect()
}

fn map_frame(store: &mut ImageStore, f: &FrameRecord, opts: &PrepareOptions) -> Result<Tensor> {
    let (h, w) = opts.map_size;
    let Some(r) = &f.map_raster else {
        return Ok(Tensor::zeros([opts.map_channels_per_step, h, w]));
    };
    let img = store.load(r)?;
    if img.shape()[0] != opts.map_channels_per_step {
        return Err(Error::Data(format!(
            "map raster `{}` has {} channels, expected {}",
            r.path,
            img.shape()[0],
            opts.map_channels_per_step
        )));
    }
    resize(&img, h, w)
}

fn scene_frame(store: &mut ImageStore, track: &Track, f: &FrameRecord, opts: &PrepareOptions) -> Result<Tensor> {
    let (h, w) = opts.scene_size;
    let Some(r) = &f.scene_image else {
        return Ok(Tensor::zeros([3, h, w]));
    };
    let img = store.load(r)?;
    if img.shape()[0] != 3 {
        return Err(Error::Data(format!("scene image `{}` must have 3 channels", r.path)));
    }
    // boxes are in camera pixels; the stored image may be rescaled
    let sx = img.shape()[2] as f64 / f64::from(track.camera_meta.width);
    let sy = img.shape()[1] as f64 / f64::from(track.camera_meta.height);
    let [x1, y1, x2, y2] = f.box2d;
    let region = crop_box([x1 * sx, y1 * sy, x2 * sx, y2 * sy], (img.shape()[2] as u32, img.shape()[1] as u32))?;
    resample_region(&img, region.square, h, w)
}

fn build_sample(
    store: &mut ImageStore,
    track: &Track,
    ordinal: usize,
    win: Window,
    opts: &PrepareOptions,
) -> Result<ObservationSample> {
    let frames = &track.frames[win.first_frame..=win.last_frame];
    let maps = frames.iter().map(|f| map_frame(store, f, opts)).collect::<Result<Vec<_>>>()?;
    let scenes = frames
        .iter()
        .map(|f| scene_frame(store, track, f, opts))
        .collect::<Result<Vec<_>>>()?;
    let ped = frames.iter().map(|f| ped_coords(track, f, opts)).collect::<Result<Vec<_>>>()?;
    let veh = match opts.mode {
        InputMode::TwoD => frames.iter().map(|f| ego_features(track, f)).collect::<Result<Vec<_>>>()?,
        InputMode::ThreeD => with_velocity(
            frames
                .iter()
                .map(|f| global(track, f.ego_global.as_deref(), "ego_global", opts.coord_dim))
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    Ok(ObservationSample {
        track_id: track.track_id.clone(),
        window: ordinal,
        last_frame: win.last_frame,
        map_stack: stack_channels(&maps)?,
        scene_stack: stack_channels(&scenes)?,
        ped_motion: with_velocity(ped),
        veh_motion: veh,
        label: track.label.as_u8(),
        tte: win.tte(track.frame_rate),
    })
}

/// All observation samples of one track, earliest window first.
pub fn prepare_track(track: &Track, store: &mut ImageStore, opts: &PrepareOptions) -> Result<Vec<ObservationSample>> {
    let clipped = clip_track(track)?;
    sample_windows(&clipped)?
        .into_iter()
        .enumerate()
        .map(|(i, w)| build_sample(store, &clipped, i, w, opts))
        .collect()
}

/// Samples of every track, in input order.
pub fn prepare_dataset(tracks: &[Track], store: &mut ImageStore, opts: &PrepareOptions) -> Result<Vec<ObservationSample>> {
    let mut out = Vec::new();
    for t in tracks {
        out.extend(prepare_track(t, store, opts)?);
    }
    Ok(out)
}
