//! Binary checkpoints: a JSON header describing the model, then every
//! parameter in name order as little-endian `f64`.
//!
//! ```text
//! magic "PCPCKPT\0" | u32 version | u64 header_len | header JSON
//! u64 count | count x (u32 name_len | name | u32 rank | u64 dims.. | f64 values..)
//! ```

use std::fs;
use std::path::Path;

use pcp_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::model::{Classifier, ModelParams, Modalities, Network, TrajectoryBaseline};

const MAGIC: &[u8; 8] = b"PCPCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Which classifier a parameter set belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Network { config: ModelConfig, modalities: String },
    Baseline { coord_dim: usize, hidden: usize },
}

impl ModelSpec {
    pub fn network(net: &Network) -> Self {
        Self::Network {
            config: net.config().clone(),
            modalities: net.modalities().to_string(),
        }
    }

    pub fn baseline(b: &TrajectoryBaseline) -> Self {
        Self::Baseline {
            coord_dim: b.coord_dim,
            hidden: b.hidden,
        }
    }

    pub fn classifier(&self) -> Result<Box<dyn Classifier + Send + Sync>> {
        Ok(match self {
            Self::Network { config, modalities } => {
                let m: Modalities = modalities.parse()?;
                Box::new(Network::new(config.clone())?.with_modalities(m))
            }
            Self::Baseline { coord_dim, hidden } => Box::new(TrajectoryBaseline::new(*coord_dim, *hidden)?),
        })
    }

    pub fn model_config(&self) -> Option<&ModelConfig> {
        match self {
            Self::Network { config, .. } => Some(config),
            Self::Baseline { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelSpec,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            format_version: CHECKPOINT_VERSION,
            model: self.model.clone(),
        })
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(32 + header.len() + 8 * self.params.census());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let header_len = r.len()?;
        let header: Header =
            serde_json::from_slice(r.take(header_len)?).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let count = r.len()?;
        let mut params = ModelParams::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
            params.insert(name, t);
        }
        if r.at != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        let ck = Self {
            model: header.model,
            params,
        };
        ck.params.conforms_to(&ck.model.classifier()?.param_specs())?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
