//! Newline-delimited JSON dataset files, one track per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use super::types::{FrameRecord, Track};
use crate::config::InputMode;
use crate::error::{Error, Result};

const TRACK_FIELDS: &[&str] = &[
    "format_version",
    "track_id",
    "frame_rate",
    "label",
    "crossing_frame",
    "camera_meta",
    "frames",
];
const FRAME_FIELDS: &[&str] = &[
    "time",
    "box2d",
    "ped_global",
    "ego_global",
    "ego_speed",
    "map_raster",
    "scene_image",
];

struct Fields<'a> {
    record: usize,
    prefix: String,
    obj: &'a Map<String, Value>,
}

impl<'a> Fields<'a> {
    fn new(record: usize, prefix: String, value: &'a Value, allowed: &[&str]) -> Result<Self> {
        let what = if prefix.is_empty() { "record" } else { prefix.trim_end_matches('.') };
        let obj = value
            .as_object()
            .ok_or_else(|| Error::schema(record, what, "expected an object"))?;
        if let Some(key) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::schema(record, format!("{prefix}{key}"), "unknown field"));
        }
        Ok(Self { record, prefix, obj })
    }

    fn optional<T: DeserializeOwned>(&self, name: &str) -> Result<Option<T>> {
        match self.obj.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => T::deserialize(v)
                .map(Some)
                .map_err(|e| Error::schema(self.record, format!("{}{name}", self.prefix), e.to_string())),
        }
    }

    fn required<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        self.optional(name)?
            .ok_or_else(|| Error::schema(self.record, format!("{}{name}", self.prefix), "missing required field"))
    }
}

fn parse_frame(record: usize, index: usize, value: &Value) -> Result<FrameRecord> {
    let f = Fields::new(record, format!("frames[{index}]."), value, FRAME_FIELDS)?;
    Ok(FrameRecord {
        time: f.required("time")?,
        box2d: f.required("box2d")?,
        ped_global: f.optional("ped_global")?,
        ego_global: f.optional("ego_global")?,
        ego_speed: f.optional("ego_speed")?,
        map_raster: f.optional("map_raster")?,
        scene_image: f.optional("scene_image")?,
    })
}

/// Parses one record, naming the offending field on failure.
pub fn parse_track(record: usize, value: &Value) -> Result<Track> {
    let f = Fields::new(record, String::new(), value, TRACK_FIELDS)?;
    let frames: Vec<Value> = f.required("frames")?;
    Ok(Track {
        format_version: f.required("format_version")?,
        track_id: f.required("track_id")?,
        frame_rate: f.required("frame_rate")?,
        label: f.required("label")?,
        crossing_frame: f.optional("crossing_frame")?,
        camera_meta: f.required("camera_meta")?,
        frames: frames
            .iter()
            .enumerate()
            .map(|(i, v)| parse_frame(record, i, v))
            .collect::<Result<_>>()?,
    })
}

/// Parses and validates dataset text; blank lines are skipped and record
/// indices count non-blank lines from zero.
pub fn parse_dataset(text: &str, mode: InputMode) -> Result<Vec<Track>> {
    let mut tracks = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let record = tracks.len();
        let value: Value = serde_json::from_str(line)
            .map_err(|e| Error::schema(record, "record", format!("malformed JSON: {e}")))?;
        let track = parse_track(record, &value)?;
        track.validate(record, mode)?;
        tracks.push(track);
    }
    Ok(tracks)
}

pub fn load_dataset(path: &Path, mode: InputMode) -> Result<Vec<Track>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, mode)
}

pub fn dataset_to_string(tracks: &[Track]) -> Result<String> {
    let mut out = String::new();
    for t in tracks {
        out.push_str(&serde_json::to_string(t).map_err(|e| Error::Data(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes bytes through a temporary file in the target directory, renamed
/// into place only on success.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_dataset(path: &Path, tracks: &[Track]) -> Result<()> {
    write_atomic(path, dataset_to_string(tracks)?.as_bytes())
}
