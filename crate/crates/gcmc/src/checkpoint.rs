//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | content                                   |
//! |--------------|-------------------------------------------|
//! | 8            | magic `GCMCCKPT`                          |
//! | 4 (u32)      | format version, currently 1               |
//! | 8 (u64)      | header length `H` in bytes                |
//! | H            | UTF-8 JSON header                         |
//! | rest         | tensor data, f64 little-endian, row-major |
//!
//! The header holds the model config, free-form run metadata and a tensor
//! table. Each entry names a tensor, its group (`params` or `ema`), its
//! shape and its offset in f64 elements from the start of the data block.

use std::io::{Read, Write};
use std::path::Path;

use gcmc_core::model::{ModelConfig, Parameters};
use gcmc_core::Tensor;
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"GCMCCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub meta: serde_json::Value,
    pub params: Parameters,
    pub ema: Parameters,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut data: Vec<f64> = Vec::new();
        for (group, set) in [("params", &self.params), ("ema", &self.ema)] {
            for (name, t) in set.iter() {
                tensors.push(TensorEntry {
                    group: group.into(),
                    name: name.into(),
                    rows: t.rows(),
                    cols: t.cols(),
                    offset: data.len(),
                });
                data.extend_from_slice(t.data());
            }
        }
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            meta: self.meta.clone(),
            tensors,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + data.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let corrupt = |m: &str| CheckpointError::Corrupt(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let data_start = 20usize.checked_add(header_len).ok_or_else(|| corrupt("header length"))?;
        if data_start > bytes.len() {
            return Err(corrupt("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&bytes[20..data_start]).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let block = &bytes[data_start..];
        if block.len() % 8 != 0 {
            return Err(corrupt("data block is not a whole number of f64 values"));
        }
        let values: Vec<f64> = block
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut params = Vec::new();
        let mut ema = Vec::new();
        for e in header.tensors {
            let len = e.rows * e.cols;
            let slice = values
                .get(e.offset..e.offset + len)
                .ok_or_else(|| CheckpointError::Corrupt(format!("tensor {} out of range", e.name)))?;
            let t = Tensor::from_vec(e.rows, e.cols, slice.to_vec()).map_err(|err| CheckpointError::Corrupt(err.to_string()))?;
            match e.group.as_str() {
                "params" => params.push((e.name, t)),
                "ema" => ema.push((e.name, t)),
                other => return Err(CheckpointError::Corrupt(format!("unknown group {other}"))),
            }
        }
        let ckpt = Checkpoint {
            config: header.config,
            meta: header.meta,
            params: Parameters::from_entries(params),
            ema: Parameters::from_entries(ema),
        };
        for set in [&ckpt.params, &ckpt.ema] {
            set.check_against(&ckpt.config)
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        }
        Ok(ckpt)
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gcmc_core::rng::{Purpose, SeedStreams};

    fn sample() -> Checkpoint {
        let mut config = ModelConfig::new(3, 4, vec![1, 2, 3, 4, 5]);
        config.hidden = 10;
        config.output = 2;
        let params = Parameters::init(&config, &mut SeedStreams::new(1).stream(Purpose::Init, 0)).unwrap();
        let mut ema = params.clone();
        for (_, t) in ema.iter_mut() {
            for v in t.data_mut() {
                *v *= 0.5;
            }
        }
        Checkpoint {
            config,
            meta: serde_json::json!({"seed": 1}),
            params,
            ema,
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..8], b"GCMCCKPT");
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
        assert_eq!(bytes, c.to_bytes());
    }

    #[test]
    fn rejects_damage() {
        let bytes = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(CheckpointError::BadMagic)));
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(CheckpointError::Version(9))));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    }
}
