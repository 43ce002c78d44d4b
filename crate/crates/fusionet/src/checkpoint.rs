//! Checkpoint file format.
//!
//! ```text
//! "FNET" | u32 version | u32 n | n bytes config JSON | u32 tensor count |
//! per tensor: u16 name length, name, u8 rank, u32 dims[rank], f32 payload |
//! u32 CRC32 of everything before it
//! ```
//!
//! Integers and floats are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use fusionet_core::params::ParamSet;
use fusionet_core::{Dims, FusionKind, Model, ModelConfig, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FNET";
pub const VERSION: u32 = 1;

/// Validation record of the retained epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub epoch: usize,
    pub val_accuracy: f64,
    pub val_weighted_f1: f64,
}

/// The JSON block: everything needed to rebuild the model and encode text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub fusion: String,
    pub visual_dim: usize,
    pub hidden: usize,
    pub seq_len: usize,
    pub attention: usize,
    pub embed: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub mask_padding: bool,
    pub vocabulary: Vec<String>,
    pub label_map: BTreeMap<String, usize>,
    pub best: BestRecord,
}

impl CheckpointConfig {
    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            fusion: self.fusion.parse::<FusionKind>()?,
            dims: Dims {
                visual: self.visual_dim,
                hidden: self.hidden,
                seq_len: self.seq_len,
                attention: self.attention,
                embed: self.embed,
                conv: [self.conv1, self.conv2],
            },
            vocab_size: self.vocabulary.len(),
            mask_padding: self.mask_padding,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: CheckpointConfig,
    pub params: ParamSet<f32>,
}

impl Checkpoint {
    pub fn new(
        model: &Model<f32>,
        vocabulary: Vec<String>,
        label_map: BTreeMap<String, usize>,
        best: BestRecord,
    ) -> Self {
        let mc = model.config();
        let d = mc.dims;
        Self {
            config: CheckpointConfig {
                fusion: mc.fusion.as_str().into(),
                visual_dim: d.visual,
                hidden: d.hidden,
                seq_len: d.seq_len,
                attention: d.attention,
                embed: d.embed,
                conv1: d.conv[0],
                conv2: d.conv[1],
                mask_padding: mc.mask_padding,
                vocabulary,
                label_map,
                best,
            },
            params: model.params().clone(),
        }
    }

    /// The stored model under its own configuration.
    pub fn model(&self) -> Result<Model<f32>> {
        self.model_as(self.config.model_config()?)
    }

    /// The stored weights under another configuration; fails when any
    /// tensor is missing or has a different shape.
    pub fn model_as(&self, config: ModelConfig) -> Result<Model<f32>> {
        Ok(Model::from_params(config, self.params.clone())?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_vec(&self.config).expect("config serialises");
        let mut out = Vec::with_capacity(16 + json.len() + 4 * self.params.total_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt(0, "bad magic, not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(4, format!("unsupported version {version}")));
        }
        let json_len = r.u32()? as usize;
        let at = r.pos;
        let config: CheckpointConfig =
            serde_json::from_slice(r.take(json_len)?).map_err(|e| corrupt(at, format!("config block: {e}")))?;
        let count = r.u32()?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let at = r.pos;
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| corrupt(at + 2, "tensor name is not UTF-8"))?
                .to_string();
            if params.find(&name).is_some() {
                return Err(corrupt(at, format!("tensor `{name}` appears twice")));
            }
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|n| n.checked_mul(4).is_some())
                .ok_or_else(|| corrupt(at, format!("tensor `{name}` has an impossible shape {shape:?}")))?;
            let data = r
                .take(4 * n)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| corrupt(at, e.to_string()))?;
            params.push(name, tensor);
        }
        let body_end = r.pos;
        let stored = r.u32()?;
        if r.pos != bytes.len() {
            return Err(corrupt(
                r.pos,
                format!("{} unexpected trailing bytes", bytes.len() - r.pos),
            ));
        }
        let actual = crc32fast::hash(&bytes[..body_end]);
        if stored != actual {
            return Err(corrupt(
                body_end,
                format!("CRC mismatch (stored {stored:08x}, computed {actual:08x})"),
            ));
        }
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn corrupt(offset: usize, message: impl Into<String>) -> Error {
    Error::CorruptCheckpoint {
        offset,
        message: message.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or_else(|| corrupt(self.pos, "length overflows"))?;
        if end > self.bytes.len() {
            return Err(Error::TruncatedCheckpoint {
                expected: end,
                actual: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
