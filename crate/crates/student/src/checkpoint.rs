//! Binary model checkpoints.
//!
//! Layout: 8-byte magic, little-endian `u32` header length, a JSON header,
//! then every parameter as a little-endian `f32` in layout order.

use std::path::Path;

use lvkd_core::io::write_atomic;
use serde::{Deserialize, Serialize};

use crate::config::{Layout, ModelConfig, ParamEntry};
use crate::error::{Result, StudentError};
use crate::model::Model;

pub const MAGIC: &[u8; 8] = b"LVKDCKPT";
pub const FORMAT_VERSION: u32 = 1;
/// Headers larger than this are rejected before allocation.
pub const MAX_HEADER_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    seed: u64,
    epoch: Option<usize>,
    val_loss: Option<f64>,
    entries: Vec<ParamEntry>,
}

/// A model plus the training metadata stored alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub epoch: Option<usize>,
    pub val_loss: Option<f64>,
}

fn bad(msg: impl Into<String>) -> StudentError {
    StudentError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(model: Model<f32>) -> Self {
        Self {
            model,
            epoch: None,
            val_loss: None,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.model.config().clone(),
            seed: self.model.seed(),
            epoch: self.epoch,
            val_loss: self.val_loss.filter(|v| v.is_finite()),
            entries: self.model.layout().entries.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| bad(format!("header encode: {e}")))?;
        let params = self.model.params();
        let mut out = Vec::with_capacity(12 + json.len() + 4 * params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        if header_len > MAX_HEADER_BYTES || 12 + header_len > bytes.len() {
            return Err(bad(format!("header length {header_len} exceeds file")));
        }
        let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
            .map_err(|e| bad(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        header.config.validate()?;
        let layout = Layout::new(&header.config);
        if header.entries != layout.entries {
            return Err(bad("parameter table does not match the configuration"));
        }
        let blob = &bytes[12 + header_len..];
        if blob.len() != 4 * layout.total {
            return Err(bad(format!(
                "expected {} parameter bytes, found {}",
                4 * layout.total,
                blob.len()
            )));
        }
        let params = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let model = Model::from_parts(header.config, header.seed, params)?;
        Ok(Self {
            model,
            epoch: header.epoch,
            val_loss: header.val_loss,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(write_atomic(path, &self.encode()?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| lvkd_core::Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
