//! Checkpoint files.
//!
//! Layout: the 8-byte magic `ASGCKPT1`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then every parameter tensor as little-endian `f64`
//! values in the order the header lists them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureModels, LatentSpec};
use crate::autodiff::ParamId;
use crate::error::{Error, Result};
use crate::training::{Mode, Variant};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ASGCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub id: ParamId,
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub spec: LatentSpec,
    pub variant: Variant,
    pub mode: Mode,
    pub params: Vec<ParamRecord>,
}

impl FeatureModels {
    pub fn to_checkpoint_bytes(&self, variant: Variant, mode: Mode) -> Vec<u8> {
        let header = CheckpointHeader {
            spec: self.spec.clone(),
            variant,
            mode,
            params: self
                .parameters()
                .iter()
                .map(|p| ParamRecord {
                    id: p.id(),
                    name: p.name().to_string(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.parameters() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<(Self, CheckpointHeader)> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic bytes (expected ASGCKPT1)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16 + len)
            .ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let mut models = FeatureModels::new(header.spec.clone(), 0)?;
        let mut offset = 16 + len;
        {
            let params = models.parameters_mut();
            if params.len() != header.params.len() {
                return Err(bad("parameter list does not match architecture"));
            }
            for (p, rec) in params.into_iter().zip(&header.params) {
                if p.id() != rec.id || p.name() != rec.name || p.value.shape() != rec.shape.as_slice()
                {
                    return Err(Error::Checkpoint(format!(
                        "parameter {} does not match architecture",
                        rec.name
                    )));
                }
                for v in p.value.data_mut() {
                    let chunk = bytes
                        .get(offset..offset + 8)
                        .ok_or_else(|| bad("truncated parameter data"))?;
                    *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
                    offset += 8;
                }
            }
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after parameter data"));
        }
        Ok((models, header))
    }

    pub fn save(&self, path: &Path, variant: Variant, mode: Mode) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes(variant, mode)).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointHeader)> {
        let bytes = fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_every_bit() {
        let m = FeatureModels::new(LatentSpec::new(5, 3).with_hidden(7), 42).unwrap();
        let bytes = m.to_checkpoint_bytes(Variant::VaeGan, Mode::Transductive);
        let (back, header) = FeatureModels::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.variant, Variant::VaeGan);
        assert_eq!(header.mode, Mode::Transductive);
        assert_eq!(back.to_checkpoint_bytes(Variant::VaeGan, Mode::Transductive), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = FeatureModels::new(LatentSpec::new(2, 2).with_hidden(3), 0).unwrap();
        let bytes = m.to_checkpoint_bytes(Variant::Gan, Mode::Inductive);
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(FeatureModels::from_checkpoint_bytes(&wrong_magic).is_err());
        assert!(FeatureModels::from_checkpoint_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(FeatureModels::from_checkpoint_bytes(&extra).is_err());
    }
}
