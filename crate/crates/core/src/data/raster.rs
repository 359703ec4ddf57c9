//! Image loading (PNM, PNG and raw-tensor sidecars) and bilinear resampling.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pcp_tensor::Tensor;

use super::types::{ImageRef, RasterEncoding};
use crate::config::SEMANTIC_CLASSES;
use crate::error::{Error, Result};

const RAW_MAGIC: &[u8; 4] = b"RAWT";
const RAW_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RawDtype {
    U8,
    F64,
}

impl RawDtype {
    fn code(self) -> u8 {
        match self {
            Self::U8 => 1,
            Self::F64 => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Self::U8),
            2 => Some(Self::F64),
            _ => None,
        }
    }
}

/// Decoded image file: raw values plus their storage type.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub dtype: RawDtype,
    /// Unscaled values, shaped `[C, H, W]` or `[F, C, H, W]`.
    pub values: Tensor,
}

/// Encodes a raw-tensor sidecar.
///
/// Layout: `RAWT`, version byte, dtype byte (1 = u8, 2 = f64), rank byte, a
/// zero byte, `u32` little-endian dims, then the row-major body.
pub fn encode_raw(dims: &[usize], body: RawBody<'_>) -> Result<Vec<u8>> {
    let count: usize = dims.iter().product();
    let (dtype, len) = match body {
        RawBody::U8(v) => (RawDtype::U8, v.len()),
        RawBody::F64(v) => (RawDtype::F64, v.len()),
    };
    if dims.is_empty() || dims.len() > u8::MAX as usize || count != len {
        return Err(Error::Data(format!("raw tensor dims {dims:?} do not match {len} values")));
    }
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + len * 8);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&[RAW_VERSION, dtype.code(), dims.len() as u8, 0]);
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Data(format!("dimension {d} too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match body {
        RawBody::U8(v) => out.extend_from_slice(v),
        RawBody::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub enum RawBody<'a> {
    U8(&'a [u8]),
    F64(&'a [f64]),
}

pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<RawImage> {
    let bad = |reason: String| Error::Image {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 8 || &bytes[..4] != RAW_MAGIC {
        return Err(bad("missing RAWT header".into()));
    }
    if bytes[4] != RAW_VERSION {
        return Err(bad(format!("unsupported sidecar version {}", bytes[4])));
    }
    let dtype = RawDtype::from_code(bytes[5]).ok_or_else(|| bad(format!("unknown dtype code {}", bytes[5])))?;
    let rank = usize::from(bytes[6]);
    let body_at = 8 + 4 * rank;
    if rank == 0 || bytes.len() < body_at {
        return Err(bad("truncated dimension list".into()));
    }
    let dims: Vec<usize> = bytes[8..body_at]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let body = &bytes[body_at..];
    let width = match dtype {
        RawDtype::U8 => 1,
        RawDtype::F64 => 8,
    };
    if body.len() != count * width {
        return Err(bad(format!("body has {} bytes, dims {dims:?} need {}", body.len(), count * width)));
    }
    let data = match dtype {
        RawDtype::U8 => body.iter().map(|&b| f64::from(b)).collect(),
        RawDtype::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    let values = Tensor::new(dims, data).map_err(|e| bad(e.to_string()))?;
    Ok(RawImage { dtype, values })
}

fn is_raw(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("rawt"))
}

/// Reads any supported image file without caching.
pub fn read_image_file(path: &Path, encoding: RasterEncoding) -> Result<RawImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_raw(path) || bytes.starts_with(RAW_MAGIC) {
        return decode_raw(&bytes, path);
    }
    let img = image::load_from_memory(&bytes).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, pixels) = match encoding {
        RasterEncoding::Intensity => (3, img.to_rgb8().into_raw()),
        RasterEncoding::ClassIds => (1, img.to_luma8().into_raw()),
    };
    // interleaved HWC to planar CHW
    let values = Tensor::from_fn([channels, h, w], |i| {
        let (c, rest) = (i / (h * w), i % (h * w));
        f64::from(pixels[rest * channels + c])
    });
    Ok(RawImage {
        dtype: RawDtype::U8,
        values,
    })
}

/// Writes an RGB PNG from a `[3, H, W]` tensor with values in [0, 1].
pub fn write_png(path: &Path, rgb: &Tensor) -> Result<()> {
    let &[3, h, w] = rgb.shape() else {
        return Err(Error::Data(format!("expected [3, H, W], found {:?}", rgb.shape())));
    };
    let mut buf = Vec::with_capacity(3 * h * w);
    for p in 0..h * w {
        for c in 0..3 {
            buf.push((rgb.data()[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer size");
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Writes a raw sidecar.
pub fn write_raw(path: &Path, dims: &[usize], body: RawBody<'_>) -> Result<()> {
    let bytes = encode_raw(dims, body)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Converts raw values to model channels: intensities scaled to [0, 1] (u8) or
/// kept (f64); class ids expanded one-hot.
fn decode_channels(raw: &Tensor, dtype: RawDtype, encoding: RasterEncoding, path: &Path) -> Result<Tensor> {
    let &[c, h, w] = raw.shape() else {
        return Err(Error::Image {
            path: path.to_path_buf(),
            reason: format!("expected a [C, H, W] frame, found {:?}", raw.shape()),
        });
    };
    match encoding {
        RasterEncoding::Intensity => Ok(match dtype {
            RawDtype::U8 => raw.map(|v| v / 255.0),
            RawDtype::F64 => raw.clone(),
        }),
        RasterEncoding::ClassIds => {
            if c != 1 {
                return Err(Error::Image {
                    path: path.to_path_buf(),
                    reason: format!("class-id raster must have one channel, found {c}"),
                });
            }
            let mut out = Tensor::zeros([SEMANTIC_CLASSES, h, w]);
            for (p, &v) in raw.data().iter().enumerate() {
                let id = v as usize;
                if v < 0.0 || v.fract() != 0.0 || id >= SEMANTIC_CLASSES {
                    return Err(Error::Image {
                        path: path.to_path_buf(),
                        reason: format!("class id {v} outside 0..{SEMANTIC_CLASSES}"),
                    });
                }
                out.data_mut()[id * h * w + p] = 1.0;
            }
            Ok(out)
        }
    }
}

/// Resolves image references against a dataset directory, decoding each file once.
#[derive(Debug)]
pub struct ImageStore {
    root: PathBuf,
    cache: HashMap<(PathBuf, bool), Arc<RawImage>>,
}

impl ImageStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            cache: HashMap::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Serves `image` for `rel_path` without touching the filesystem.
    pub fn preload(&mut self, rel_path: &str, image: RawImage) {
        let image = Arc::new(image);
        let path = self.root.join(rel_path);
        self.cache.insert((path.clone(), false), Arc::clone(&image));
        self.cache.insert((path, true), image);
    }

    /// Loads the referenced frame as model channels `[C, H, W]`.
    pub fn load(&mut self, r: &ImageRef) -> Result<Tensor> {
        let path = self.root.join(&r.path);
        let key = (path.clone(), r.encoding == RasterEncoding::ClassIds);
        let raw = match self.cache.get(&key) {
            Some(raw) => Arc::clone(raw),
            None => {
                let raw = Arc::new(read_image_file(&path, r.encoding)?);
                self.cache.insert(key, Arc::clone(&raw));
                raw
            }
        };
        let frame = match (raw.values.shape(), r.index) {
            (&[_, _, _], None) => raw.values.clone(),
            (&[frames, c, h, w], Some(i)) => {
                if i >= frames {
                    return Err(Error::Image {
                        path,
                        reason: format!("frame index {i} outside 0..{frames}"),
                    });
                }
                let n = c * h * w;
                Tensor::new(vec![c, h, w], raw.values.data()[i * n..(i + 1) * n].to_vec())?
            }
            (shape, index) => {
                return Err(Error::Image {
                    path,
                    reason: format!("image of shape {shape:?} cannot be addressed with index {index:?}"),
                })
            }
        };
        decode_channels(&frame, raw.dtype, r.encoding, &path)
    }
}

/// Bilinear resampling of the region `[x1, y1, x2, y2]` (pixel-edge
/// coordinates) to `out_h × out_w`. Samples outside the image replicate the
/// nearest edge pixel.
pub fn resample_region(image: &Tensor, region: [f64; 4], out_h: usize, out_w: usize) -> Result<Tensor> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::Data(format!("expected [C, H, W], found {:?}", image.shape())));
    };
    let [x1, y1, x2, y2] = region;
    if !(x2 > x1 && y2 > y1) || out_h == 0 || out_w == 0 {
        return Err(Error::Data(format!("degenerate resample region {region:?}")));
    }
    let (sx, sy) = ((x2 - x1) / out_w as f64, (y2 - y1) / out_h as f64);
    let taps = |start: f64, step: f64, n: usize, limit: usize| -> Vec<(usize, usize, f64)> {
        (0..n)
            .map(|j| {
                let pos = (start + (j as f64 + 0.5) * step - 0.5).clamp(0.0, (limit - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(limit - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let cols = taps(x1, sx, out_w, w);
    let rows = taps(y1, sy, out_h, h);
    let src = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(r0, r1, fy) in &rows {
            for &(c0, c1, fx) in &cols {
                let top = plane[r0 * w + c0] * (1.0 - fx) + plane[r0 * w + c1] * fx;
                let bottom = plane[r1 * w + c0] * (1.0 - fx) + plane[r1 * w + c1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(Tensor::new(vec![c, out_h, out_w], out)?)
}

/// Whole-image resize; a no-op copy when the extents already match.
pub fn resize(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    match image.shape() {
        &[_, h, w] if (h, w) == (out_h, out_w) => Ok(image.clone()),
        &[_, h, w] => resample_region(image, [0.0, 0.0, w as f64, h as f64], out_h, out_w),
        s => Err(Error::Data(format!("expected [C, H, W], found {s:?}"))),
    }
}
