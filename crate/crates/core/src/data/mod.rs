//! Dataset records and their conversion into observation samples.

mod io;
mod pipeline;
mod prepare;
mod raster;
mod samples;
mod types;

pub use io::{dataset_to_string, load_dataset, parse_dataset, parse_track, write_atomic, write_dataset};
pub use pipeline::{
    clip_track, compute_velocity, crop_box, interpolate_frames, interpolate_track, sample_windows, stack_channels,
    unstack_channels, window_count, window_stride, windows_before, CropRegion, Window, CROP_SCALE, MAX_GAP, MIN_GAP,
};
pub use prepare::{prepare_dataset, prepare_track, PrepareOptions};
pub use raster::{
    decode_raw, encode_raw, read_image_file, resample_region, resize, write_png, write_raw, ImageStore, RawBody,
    RawDtype, RawImage,
};
pub use samples::{is_sample_file, SampleSet, SAMPLES_MAGIC};
pub use types::{
    CameraMeta, CrossingLabel, EgoMotion, FrameRecord, ImageRef, ObservationSample, RasterEncoding, Track,
    FORMAT_VERSION,
};
