use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, RunConfig};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::model::TmsonModel;
use crate::params::ParamGroup;

pub const MAGIC: &[u8; 4] = b"TMSN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamMeta {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    params: Vec<ParamMeta>,
    seed: u64,
    config: RunConfig,
}

/// A trained model together with the seed and configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TmsonModel,
    pub seed: u64,
    pub config: RunConfig,
}

impl Checkpoint {
    /// Layout: magic, version (u32 LE), header length (u32 LE), JSON header,
    /// then every parameter as f64 LE in header order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model.config.clone(),
            params: self
                .model
                .store
                .entries()
                .iter()
                .map(|e| ParamMeta { name: e.name.clone(), group: e.group, shape: e.value.shape().to_vec() })
                .collect(),
            seed: self.seed,
            config: self.config.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let len = u32::try_from(json.len()).map_err(|_| Error::Checkpoint("header too large".into()))?;
        let mut out = Vec::with_capacity(12 + json.len() + 8 * self.model.store.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        for e in self.model.store.entries() {
            for v in e.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(err("missing TMSN magic"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = word(8) as usize;
        let body = bytes.get(12..12 + len).ok_or_else(|| err("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut model = TmsonModel::new(&header.model, 0)?;
        if model.store.len() != header.params.len() {
            return Err(Error::Checkpoint(format!(
                "header lists {} parameters, architecture has {}",
                header.params.len(),
                model.store.len()
            )));
        }
        let mut data = &bytes[12 + len..];
        let expected: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        if data.len() != 8 * expected {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter bytes, found {}",
                8 * expected,
                data.len()
            )));
        }
        for (entry, meta) in model.store.entries().to_vec().iter().zip(&header.params) {
            if entry.name != meta.name || entry.group != meta.group || entry.value.shape() != meta.shape.as_slice() {
                return Err(Error::Checkpoint(format!("parameter `{}` does not match the architecture", meta.name)));
            }
        }
        for (value, meta) in model.store.values_mut().zip(&header.params) {
            let n: usize = meta.shape.iter().product();
            let vals: Vec<f64> = data[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            *value = Tensor::new(meta.shape.clone(), vals)?;
            data = &data[8 * n..];
        }
        Ok(Checkpoint { model, seed: header.seed, config: header.config })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
