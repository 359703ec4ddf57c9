//! Pure track transformations: clipping, window sampling, crops, motion
//! features, keyframe interpolation and channel stacking.

use pcp_tensor::Tensor;

use super::types::{EgoMotion, FrameRecord, Track};
use crate::config::{FRAME_RATE, OBS_LEN};
use crate::error::{Error, Result};

/// Shortest and longest gap, in frames at 10 Hz, between a window's last
/// frame and the event (1 s and 2 s, both inclusive).
pub const MIN_GAP: usize = 10;
pub const MAX_GAP: usize = 20;

/// Truncates a crossing track after its crossing frame; other tracks pass through.
pub fn clip_track(track: &Track) -> Result<Track> {
    let mut out = track.clone();
    if let Some(cf) = track.crossing_frame {
        if cf >= track.frames.len() {
            return Err(Error::Data(format!(
                "track {}: crossing frame {cf} outside 0..{}",
                track.track_id,
                track.frames.len()
            )));
        }
        out.frames.truncate(cf + 1);
    }
    Ok(out)
}

/// Frame advance between windows at 50% overlap, `ceil(obs_len / 2)`.
pub fn window_stride(obs_len: usize) -> usize {
    obs_len.div_ceil(2)
}

/// One eligible observation window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub first_frame: usize,
    pub last_frame: usize,
    /// Frames between `last_frame` and the event.
    pub gap: usize,
}

impl Window {
    pub fn tte(&self, frame_rate: f64) -> f64 {
        self.gap as f64 / frame_rate
    }
}

/// Windows of `obs_len` frames ending 1 to 2 s before `event`, earliest
/// first, advancing by [`window_stride`].
pub fn windows_before(event: usize, obs_len: usize) -> Vec<Window> {
    if obs_len == 0 || event < MIN_GAP + obs_len - 1 {
        return Vec::new();
    }
    let first = (obs_len - 1).max(event.saturating_sub(MAX_GAP));
    (first..=event - MIN_GAP)
        .step_by(window_stride(obs_len))
        .map(|last| Window {
            first_frame: last + 1 - obs_len,
            last_frame: last,
            gap: event - last,
        })
        .collect()
}

/// Closed-form window count for an event at frame index `event`.
pub fn window_count(event: usize, obs_len: usize) -> usize {
    if obs_len == 0 || event < MIN_GAP + obs_len - 1 {
        return 0;
    }
    let first = (obs_len - 1).max(event.saturating_sub(MAX_GAP));
    (event - MIN_GAP - first) / window_stride(obs_len) + 1
}

/// Windows of a clipped 10 Hz track.
pub fn sample_windows(track: &Track) -> Result<Vec<Window>> {
    if (track.frame_rate - FRAME_RATE).abs() > 1e-9 {
        return Err(Error::Data(format!(
            "track {}: sampling needs {FRAME_RATE} Hz frames, found {} Hz",
            track.track_id, track.frame_rate
        )));
    }
    let clipped = clip_track(track)?;
    Ok(windows_before(clipped.event_frame(), OBS_LEN))
}

/// Square crop around a pedestrian box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropRegion {
    /// The 1.5x-scaled box with width set to its height, about the box centre.
    pub square: [f64; 4],
    /// `square` intersected with the image.
    pub clamped: [f64; 4],
}

pub const CROP_SCALE: f64 = 1.5;

pub fn crop_box(box2d: [f64; 4], extents: (u32, u32)) -> Result<CropRegion> {
    let [x1, y1, x2, y2] = box2d;
    if !(x2 > x1 && y2 > y1) || box2d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("degenerate box {box2d:?}")));
    }
    let (cx, cy) = ((x1 + x2) / 2.0, (y1 + y2) / 2.0);
    let half = CROP_SCALE * (y2 - y1) / 2.0;
    let square = [cx - half, cy - half, cx + half, cy + half];
    let (w, h) = (f64::from(extents.0), f64::from(extents.1));
    let clamped = [square[0].max(0.0), square[1].max(0.0), square[2].min(w), square[3].min(h)];
    Ok(CropRegion { square, clamped })
}

/// Displacement of every step from the first.
pub fn compute_velocity(coords: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let Some(first) = coords.first() else {
        return Vec::new();
    };
    coords
        .iter()
        .map(|c| c.iter().zip(first).map(|(a, b)| a - b).collect())
        .collect()
}

fn lerp(a: f64, b: f64, s: f64) -> f64 {
    a + (b - a) * s
}

fn lerp_vec(a: &Option<Vec<f64>>, b: &Option<Vec<f64>>, s: f64) -> Option<Vec<f64>> {
    match (a, b) {
        (Some(a), Some(b)) if a.len() == b.len() => Some(a.iter().zip(b).map(|(&x, &y)| lerp(x, y, s)).collect()),
        (a, _) => a.clone(),
    }
}

/// Inserts `factor - 1` linearly interpolated frames between each keyframe
/// pair. Keyframes are copied unchanged; imagery and driver actions repeat
/// from the preceding keyframe.
pub fn interpolate_frames(keyframes: &[FrameRecord], factor: usize) -> Result<Vec<FrameRecord>> {
    if keyframes.len() < 2 {
        return Err(Error::Data(format!("interpolation needs at least 2 keyframes, found {}", keyframes.len())));
    }
    if factor == 0 {
        return Err(Error::Data("interpolation factor must be positive".into()));
    }
    for (i, pair) in keyframes.windows(2).enumerate() {
        if !(pair[1].time > pair[0].time) {
            return Err(Error::Data(format!("keyframe {} is not after keyframe {i}", i + 1)));
        }
    }
    let mut out = Vec::with_capacity(factor * (keyframes.len() - 1) + 1);
    for pair in keyframes.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        out.push(a.clone());
        for k in 1..factor {
            let s = k as f64 / factor as f64;
            let ego_speed = match (a.ego_speed, b.ego_speed) {
                (Some(EgoMotion::Speed(u)), Some(EgoMotion::Speed(v))) => Some(EgoMotion::Speed(lerp(u, v, s))),
                (m, _) => m,
            };
            out.push(FrameRecord {
                time: lerp(a.time, b.time, s),
                box2d: std::array::from_fn(|i| lerp(a.box2d[i], b.box2d[i], s)),
                ped_global: lerp_vec(&a.ped_global, &b.ped_global, s),
                ego_global: lerp_vec(&a.ego_global, &b.ego_global, s),
                ego_speed,
                map_raster: a.map_raster.clone(),
                scene_image: a.scene_image.clone(),
            });
        }
    }
    out.push(keyframes.last().expect("nonempty").clone());
    Ok(out)
}

/// Upsamples a keyframe track by `factor` (5 for 2 Hz to 10 Hz).
pub fn interpolate_track(track: &Track, factor: usize) -> Result<Track> {
    let frames = interpolate_frames(&track.frames, factor)?;
    Ok(Track {
        frame_rate: track.frame_rate * factor as f64,
        crossing_frame: track.crossing_frame.map(|k| k * factor),
        frames,
        ..track.clone()
    })
}

/// Channel concatenation of per-step `[C, H, W]` images, oldest first.
pub fn stack_channels(images: &[Tensor]) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(Error::Data("no images to stack".into()));
    };
    let &[_, h, w] = first.shape() else {
        return Err(Error::Data(format!("expected [C, H, W], found {:?}", first.shape())));
    };
    let mut channels = 0;
    let mut data = Vec::with_capacity(images.iter().map(Tensor::numel).sum());
    for (i, img) in images.iter().enumerate() {
        match img.shape() {
            &[c, ih, iw] if (ih, iw) == (h, w) => {
                channels += c;
                data.extend_from_slice(img.data());
            }
            s => {
                return Err(Error::Data(format!(
                    "image {i} has shape {s:?}, expected extents {h}x{w}"
                )))
            }
        }
    }
    Ok(Tensor::new(vec![channels, h, w], data)?)
}

/// Inverse of [`stack_channels`] for equal per-step channel counts.
pub fn unstack_channels(stack: &Tensor, steps: usize) -> Result<Vec<Tensor>> {
    let &[c, h, w] = stack.shape() else {
        return Err(Error::Data(format!("expected [C, H, W], found {:?}", stack.shape())));
    };
    if steps == 0 || c % steps != 0 {
        return Err(Error::Data(format!("{c} channels do not split into {steps} steps")));
    }
    let per = c / steps;
    let n = per * h * w;
    stack
        .data()
        .chunks_exact(n)
        .map(|chunk| Ok(Tensor::new(vec![per, h, w], chunk.to_vec())?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_is_half_window_rounded_up() {
        assert_eq!(window_stride(5), 3);
        assert_eq!(window_stride(4), 2);
    }

    #[test]
    fn fifteen_frames_give_one_window() {
        assert_eq!(
            windows_before(14, 5),
            vec![Window {
                first_frame: 0,
                last_frame: 4,
                gap: 10
            }]
        );
        assert!(windows_before(9, 5).is_empty());
    }

    #[test]
    fn crop_example() {
        let r = crop_box([100.0, 100.0, 140.0, 180.0], (1920, 1080)).unwrap();
        assert_eq!(r.square, [60.0, 80.0, 180.0, 200.0]);
        assert_eq!(r.clamped, r.square);
        assert!(crop_box([5.0, 5.0, 5.0, 9.0], (10, 10)).is_err());
    }
}
