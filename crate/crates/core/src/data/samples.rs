//! Binary container for prepared samples, so preparation runs once.
//!
//! ```text
//! magic "PCPSMPL\0" | u32 version | options | u64 count | count x sample
//! options: u8 mode | u64 map_h map_w map_c scene_h scene_w coord_dim
//! sample:  u32 id_len | id | u64 window last_frame | u8 label | f64 tte
//!          tensor map | tensor scene | matrix ped | matrix veh
//! tensor:  u32 rank | u64 dims.. | f64 values..
//! matrix:  u64 rows cols | f64 values..
//! ```

use std::fs;
use std::path::Path;

use pcp_tensor::Tensor;

use super::io::write_atomic;
use super::prepare::PrepareOptions;
use super::types::ObservationSample;
use crate::config::InputMode;
use crate::error::{Error, Result};

pub const SAMPLES_MAGIC: &[u8; 8] = b"PCPSMPL\0";
const VERSION: u32 = 1;

/// Prepared samples together with the geometry they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub options: PrepareOptions,
    pub samples: Vec<ObservationSample>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn tensor(&mut self, t: &Tensor) {
        self.0.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            self.u64(d);
        }
        self.f64s(t.data());
    }

    fn matrix(&mut self, rows: &[Vec<f64>]) {
        let cols = rows.first().map_or(0, Vec::len);
        self.u64(rows.len());
        self.u64(cols);
        for r in rows {
            self.f64s(r);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, what: &str) -> Error {
        Error::Data(format!("sample file: {what} at byte {}", self.at))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        match self.at.checked_add(n).filter(|&e| e <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.at..end];
                self.at = end;
                Ok(s)
            }
            None => Err(self.fail("truncated")),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| self.fail("length overflow"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n.checked_mul(8).ok_or_else(|| self.fail("size overflow"))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.u64()).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| self.fail("size overflow"))?;
        let data = self.f64s(n)?;
        Ok(Tensor::new(shape, data)?)
    }

    fn matrix(&mut self) -> Result<Vec<Vec<f64>>> {
        let (rows, cols) = (self.u64()?, self.u64()?);
        (0..rows).map(|_| self.f64s(cols)).collect()
    }
}

impl SampleSet {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(SAMPLES_MAGIC.to_vec());
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        let o = &self.options;
        w.0.push(match o.mode {
            InputMode::TwoD => 2,
            InputMode::ThreeD => 3,
        });
        for v in [o.map_size.0, o.map_size.1, o.map_channels_per_step, o.scene_size.0, o.scene_size.1, o.coord_dim] {
            w.u64(v);
        }
        w.u64(self.samples.len());
        for s in &self.samples {
            w.0.extend_from_slice(&(s.track_id.len() as u32).to_le_bytes());
            w.0.extend_from_slice(s.track_id.as_bytes());
            w.u64(s.window);
            w.u64(s.last_frame);
            w.0.push(s.label);
            w.f64s(&[s.tte]);
            w.tensor(&s.map_stack);
            w.tensor(&s.scene_stack);
            w.matrix(&s.ped_motion);
            w.matrix(&s.veh_motion);
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != SAMPLES_MAGIC {
            return Err(Error::Data("not a prepared sample file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Data(format!("sample file version {version} is not supported")));
        }
        let mode = match r.u8()? {
            2 => InputMode::TwoD,
            3 => InputMode::ThreeD,
            _ => return Err(r.fail("unknown mode")),
        };
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u64()?;
        }
        let options = PrepareOptions {
            mode,
            map_size: (dims[0], dims[1]),
            map_channels_per_step: dims[2],
            scene_size: (dims[3], dims[4]),
            coord_dim: dims[5],
        };
        let count = r.u64()?;
        let mut samples = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let id_len = r.u32()? as usize;
            let track_id = std::str::from_utf8(r.take(id_len)?)
                .map_err(|_| r.fail("track id is not UTF-8"))?
                .to_string();
            let (window, last_frame) = (r.u64()?, r.u64()?);
            let label = r.u8()?;
            if label > 1 {
                return Err(r.fail("label outside {0, 1}"));
            }
            let tte = r.f64s(1)?[0];
            samples.push(ObservationSample {
                track_id,
                window,
                last_frame,
                label,
                tte,
                map_stack: r.tensor()?,
                scene_stack: r.tensor()?,
                ped_motion: r.matrix()?,
                veh_motion: r.matrix()?,
            });
        }
        if r.at != bytes.len() {
            return Err(r.fail("trailing bytes"));
        }
        Ok(Self { options, samples })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Whether a file starts with the prepared-sample magic.
pub fn is_sample_file(path: &Path) -> Result<bool> {
    use std::io::Read;
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 8];
    match f.read_exact(&mut head) {
        Ok(()) => Ok(&head == SAMPLES_MAGIC),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Ok(false),
        Err(e) => Err(Error::io(path, e)),
    }
}
