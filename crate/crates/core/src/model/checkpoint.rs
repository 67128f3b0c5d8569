//! Binary checkpoint container.
//!
//! Layout: `b"BDRKCKPT"`, `u32` version, `u64` header length, a JSON header
//! (config, seed, metadata, tensor table), then every tensor as consecutive
//! little-endian `f64` values in table order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError, ModelParameters};

pub const MAGIC: &[u8; 8] = b"BDRKCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    seed: u64,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

/// A model together with the seed and free-form metadata it was saved with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub seed: u64,
    pub metadata: BTreeMap<String, String>,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(model: Model, seed: u64) -> Self {
        Self {
            model,
            seed,
            metadata: BTreeMap::new(),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        let tensors = self.model.params.tensors();
        let header = Header {
            config: self.model.config.clone(),
            seed: self.seed,
            metadata: self.metadata.clone(),
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    len: t.len(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::with_capacity(8 * self.model.params.n_parameters());
        for (_, t) in &tensors {
            for v in t.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ModelError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated file"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b).map_err(|_| bad("truncated file"))?;
        let version = u32::from_le_bytes(u32b);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b).map_err(|_| bad("truncated file"))?;
        let len = u64::from_le_bytes(u64b) as usize;
        if len > 1 << 30 {
            return Err(bad("header too large"));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| bad(format!("header: {e}")))?;
        header.config.validate()?;

        let mut params = ModelParameters::zeros(&header.config);
        {
            let slots = params.tensors_mut();
            if slots.len() != header.tensors.len() {
                return Err(bad("tensor table does not match config"));
            }
            let mut f64b = [0u8; 8];
            for ((name, slot), entry) in slots.into_iter().zip(&header.tensors) {
                if name != entry.name || slot.len() != entry.len {
                    return Err(bad(format!("tensor {} does not match expected {name}", entry.name)));
                }
                for v in slot.iter_mut() {
                    r.read_exact(&mut f64b).map_err(|_| bad("truncated tensor data"))?;
                    *v = f64::from_le_bytes(f64b);
                }
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self {
            model: Model::from_parameters(header.config, params)?,
            seed: header.seed,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Model {
        Model::new(
            ModelConfig {
                embedding_dim: 6,
                hidden_size: 3,
                ..ModelConfig::default()
            },
            9,
        )
        .unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let mut ck = Checkpoint::new(small(), 9);
        ck.metadata.insert("fold".into(), "2".into());
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = Checkpoint::new(small(), 1).to_bytes().unwrap();
        assert!(Checkpoint::read_from(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::read_from(wrong.as_slice()).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::read_from(extra.as_slice()).is_err());
    }
}
