//! "UDCK" model container.
//!
//! Layout: magic `UDCK`, format version (u32 LE), metadata length (u32 LE),
//! UTF-8 JSON metadata, then every tensor as raw little-endian f32 in the
//! order listed in the metadata.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{ScheduleConfig, UNetConfig};
use crate::enhancer::EnhancerConfig;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Prior,
    Spatial,
    Temporal,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Prior => "prior",
            Stage::Spatial => "spatial",
            Stage::Temporal => "temporal",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// One line of a training log: epoch index plus named scalar values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub values: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: Stage,
    pub unet: UNetConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub enhancer: Option<EnhancerConfig>,
    /// Hash of the prior checkpoint whose encoder an enhancer carries.
    #[serde(default)]
    pub prior_hash: Option<String>,
    pub seed: u64,
    #[serde(default)]
    pub log: Vec<EpochRecord>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    /// Builds a checkpoint from `(name, shape, values)` triples; the metadata
    /// tensor list is filled in here.
    pub fn new(mut meta: CheckpointMeta, params: Vec<(String, Vec<usize>, Vec<f32>)>) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        meta.tensors.clear();
        for (name, shape, values) in params {
            if shape.iter().product::<usize>() != values.len() {
                return Err(Error::Shape(format!("tensor {name}: shape {shape:?} vs {} values", values.len())));
            }
            meta.tensors.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
            });
            if tensors.insert(name.clone(), (shape, values)).is_some() {
                return Err(Error::Parameter(format!("duplicate tensor {name}")));
            }
        }
        Ok(Self { meta, tensors })
    }

    pub fn stage(&self) -> Stage {
        self.meta.stage
    }

    pub fn require_stage(&self, expected: Stage) -> Result<()> {
        if self.meta.stage != expected {
            return Err(Error::Stage {
                expected: expected.to_string(),
                found: self.meta.stage.to_string(),
            });
        }
        Ok(())
    }

    /// Tensors whose names start with `prefix`, with the prefix stripped.
    pub fn with_prefix(&self, prefix: &str) -> BTreeMap<String, (Vec<usize>, Vec<f32>)> {
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(|(_, v)| v.len()).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let meta_len = u32::try_from(meta.len()).map_err(|_| Error::Parameter("metadata too large".into()))?;
        let mut out = Vec::with_capacity(12 + meta.len() + self.num_params() * 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&meta_len.to_le_bytes());
        out.extend_from_slice(&meta);
        for entry in &self.meta.tensors {
            for v in &self.tensors[&entry.name].1 {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("missing UDCK header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let meta_end = 12usize
            .checked_add(meta_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("truncated checkpoint metadata".into()))?;
        let meta: CheckpointMeta =
            serde_json::from_slice(&bytes[12..meta_end]).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        let mut body = &bytes[meta_end..];
        let mut tensors = BTreeMap::new();
        for entry in &meta.tensors {
            let n: usize = entry.shape.iter().product();
            if body.len() < n * 4 {
                return Err(Error::Format(format!("truncated tensor {}", entry.name)));
            }
            let values = body[..n * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            body = &body[n * 4..];
            tensors.insert(entry.name.clone(), (entry.shape.clone(), values));
        }
        if !body.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after tensors", body.len())));
        }
        Ok(Self { meta, tensors })
    }

    /// SHA-256 of the serialized checkpoint, hex encoded.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
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
