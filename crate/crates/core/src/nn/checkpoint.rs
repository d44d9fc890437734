//! `ICHC` checkpoint files: magic, u32 LE header length, JSON header, then
//! f32 LE tensor payloads at the offsets listed in the header.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{IchNet, IchNetConfig};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ICHC";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: IchNetConfig,
    pub fold: usize,
    pub seed: u64,
    pub model: IchNet<f32>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: IchNetConfig,
    fingerprint: String,
    fold: usize,
    seed: u64,
    tensors: BTreeMap<String, TensorEntry>,
}

impl ModelCheckpoint {
    pub fn new(model: IchNet<f32>, fold: usize, seed: u64) -> Self {
        ModelCheckpoint {
            config: model.config().clone(),
            fold,
            seed,
            model,
        }
    }

    pub fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = BTreeMap::new();
        let mut payload = Vec::new();
        for (_, p) in self.model.params().iter() {
            tensors.insert(
                p.name.clone(),
                TensorEntry {
                    shape: p.tensor.shape().to_vec(),
                    offset: payload.len(),
                },
            );
            for v in p.tensor.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            config: self.config.clone(),
            fingerprint: self.fingerprint(),
            fold: self.fold,
            seed: self.seed,
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(8 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                expected: "ICHC",
                found: bytes[..bytes.len().min(4)].to_vec(),
            });
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let json = bytes
            .get(8..8 + len)
            .ok_or_else(|| Error::Header("checkpoint header truncated".into()))?;
        let header: Header = serde_json::from_slice(json)?;
        let expected = header.config.fingerprint();
        if header.fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                expected,
                found: header.fingerprint,
            });
        }
        let payload = &bytes[8 + len..];
        let mut store = ParamStore::new();
        let mut used = 0usize;
        let mut entries: Vec<_> = header.tensors.iter().collect();
        entries.sort_by_key(|(_, e)| e.offset);
        for (name, entry) in entries {
            let n: usize = entry.shape.iter().product();
            let raw = payload
                .get(entry.offset..entry.offset + 4 * n)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} runs past the payload")))?;
            if entry.offset != used {
                return Err(Error::Checkpoint(format!("tensor {name} overlaps or leaves a gap")));
            }
            used += 4 * n;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            store.add(name.clone(), Tensor::new(entry.shape.clone(), data)?)?;
        }
        if used != payload.len() {
            return Err(Error::LengthMismatch {
                expected: used,
                found: payload.len(),
            });
        }
        let model = IchNet::from_params(header.config.clone(), store)?;
        Ok(ModelCheckpoint {
            config: header.config,
            fold: header.fold,
            seed: header.seed,
            model,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelCheckpoint {
        let config = IchNetConfig {
            input_dims: [8, 8, 4],
            slow_stride: 2,
            fast_widths: [1, 2, 2],
            slow_widths: [2, 2, 3],
            embedding_dim: 4,
            ..IchNetConfig::default()
        };
        ModelCheckpoint::new(IchNet::new(config, 4).unwrap(), 2, 99)
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = small();
        let bytes = ck.to_bytes();
        let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(&bytes[..4], b"ICHC");
    }

    #[test]
    fn payload_size_matches_parameter_count() {
        let ck = small();
        let bytes = ck.to_bytes();
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        assert_eq!(bytes.len() - 8 - len, 4 * ck.model.params().scalar_count());
    }

    #[test]
    fn tampered_config_fails_fingerprint() {
        let bytes = small().to_bytes();
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + len]).unwrap();
        header["config"]["learning_rate"] = serde_json::json!(0.5);
        let json = serde_json::to_vec(&header).unwrap();
        let mut out = b"ICHC".to_vec();
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&bytes[8 + len..]);
        assert!(matches!(
            ModelCheckpoint::from_bytes(&out),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = small().to_bytes();
        assert!(matches!(ModelCheckpoint::from_bytes(b"MVV1abcd"), Err(Error::BadMagic { .. })));
        assert!(ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 4]);
        assert!(ModelCheckpoint::from_bytes(&extra).is_err());
    }
}
