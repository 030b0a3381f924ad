//! Binary checkpoint format.
//!
//! ```text
//! "WIAE"            4 bytes magic
//! version           u32 little-endian
//! header length     u64 little-endian
//! header            UTF-8 JSON: config, norm stats, tensor table, metadata
//! blobs             f32 little-endian, contiguous, in tensor-table order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::net::{NetConfig, ParamSet, Role, WiaeParams};
use crate::series::NormStats;
use crate::train::TrainMeta;

pub const MAGIC: &[u8; 4] = b"WIAE";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct WiaeCheckpoint {
    pub config: NetConfig,
    pub params: WiaeParams,
    pub norm: NormStats,
    pub meta: TrainMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    /// Offset in f32 elements from the start of the blob section.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    norm: NormStats,
    tensors: Vec<TensorEntry>,
    meta: TrainMeta,
}

impl WiaeCheckpoint {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.params.check_shapes(&self.config)?;
        if self.norm.dim() != self.config.d {
            return Err(Error::shape(format!("{} channel stats", self.config.d), self.norm.dim()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut offset = 0;
        for (_, set) in self.params.sets() {
            for (name, t) in set.names.iter().zip(&set.tensors) {
                tensors.push(TensorEntry { name: name.clone(), shape: [t.rows(), t.cols()], offset });
                offset += t.data().len();
            }
        }
        let header = Header { config: self.config.clone(), norm: self.norm.clone(), tensors, meta: self.meta.clone() };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, set) in self.params.sets() {
            for t in &set.tensors {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<WiaeCheckpoint> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 {
            return Err(bad("truncated file"));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unknown version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() < hlen {
            return Err(bad("truncated file"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let blob = &body[hlen..];
        if blob.len() % 4 != 0 {
            return Err(bad("blob section is not a whole number of f32 values"));
        }
        let floats: Vec<f32> = blob.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();

        let expected: usize = header.tensors.iter().map(|e| e.shape[0] * e.shape[1]).sum();
        if expected != floats.len() {
            return Err(Error::Checkpoint(format!(
                "header declares {expected} values but the blob holds {}",
                floats.len()
            )));
        }
        let mut entries = header.tensors.into_iter();
        let mut cursor = 0;
        let mut take_set = |role: Role| -> Result<ParamSet> {
            let want = ParamSet::zeros(&header.config, role);
            let mut set = ParamSet { names: Vec::new(), tensors: Vec::new() };
            for _ in 0..want.len() {
                let e = entries.next().ok_or_else(|| bad("tensor table too short"))?;
                let n = e.shape[0] * e.shape[1];
                if e.offset != cursor {
                    return Err(Error::Checkpoint(format!("tensor {} has offset {} but expected {cursor}", e.name, e.offset)));
                }
                set.tensors.push(Tensor::new(e.shape[0], e.shape[1], floats[cursor..cursor + n].to_vec()));
                set.names.push(e.name);
                cursor += n;
            }
            set.check_shapes(&header.config, role)?;
            Ok(set)
        };
        let params = WiaeParams {
            encoder: take_set(Role::Encoder)?,
            decoder: take_set(Role::Decoder)?,
            innovation_critic: take_set(Role::InnovationCritic)?,
            reconstruction_critic: take_set(Role::ReconstructionCritic)?,
        };
        if entries.next().is_some() {
            return Err(bad("tensor table has extra entries"));
        }
        let ckpt = WiaeCheckpoint { config: header.config, params, norm: header.norm, meta: header.meta };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, sink: &mut impl Write) -> Result<()> {
        sink.write_all(&self.to_bytes()?).map_err(|e| Error::io("<checkpoint sink>", e))
    }

    pub fn load(source: &mut impl Read) -> Result<WiaeCheckpoint> {
        let mut buf = Vec::new();
        source.read_to_end(&mut buf).map_err(|e| Error::io("<checkpoint source>", e))?;
        WiaeCheckpoint::from_bytes(&buf)
    }

    pub fn save_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_file(path: &Path) -> Result<WiaeCheckpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        WiaeCheckpoint::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::TrainMeta;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> WiaeCheckpoint {
        let mut cfg = NetConfig::new(6, 2, 2);
        cfg.hidden = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        WiaeCheckpoint {
            params: WiaeParams::init(&cfg, &mut rng),
            config: cfg,
            norm: NormStats { mean: vec![0.1, -3.25], scale: vec![1.0 / 3.0, 7.5] },
            meta: TrainMeta { seed: 42, epochs: 3, ..TrainMeta::default() },
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = WiaeCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[0] = b'X';
        let err = WiaeCheckpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{err}");
    }

    #[test]
    fn rejects_unknown_version() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4] = 9;
        assert!(WiaeCheckpoint::from_bytes(&bytes).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn rejects_truncation_and_length_mismatch() {
        let bytes = sample().to_bytes().unwrap();
        assert!(WiaeCheckpoint::from_bytes(&bytes[..10]).is_err());
        assert!(WiaeCheckpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        let mut longer = bytes.clone();
        longer.extend_from_slice(&[0; 4]);
        assert!(WiaeCheckpoint::from_bytes(&longer).is_err());
    }

    #[test]
    fn rejects_header_shape_inconsistent_with_config() {
        let mut c = sample();
        c.params.decoder.tensors[0] = Tensor::zeros(3, 3);
        let bytes = c.to_bytes().unwrap();
        assert!(matches!(WiaeCheckpoint::from_bytes(&bytes), Err(Error::Shape { .. })));
    }
}
