//! Binary checkpoint format.
//!
//! ```text
//! "ECGCRN1"  magic (7 bytes)
//! u8         version
//! u32        config length, then that many bytes of `key = value` text
//! u32        tensor count
//! per tensor:
//!   u16 name length, name bytes (UTF-8)
//!   u8  rank, then rank × u64 dimensions
//!   f64 values, little-endian, row-major
//! ```
//! All integers are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::layers::Layer;
use super::model::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::kv::KvMap;

pub const MAGIC: &[u8; 7] = b"ECGCRN1";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    /// Parameters and batch-norm running statistics of `model`.
    pub fn capture(model: &Model) -> Self {
        let tensors = model
            .params()
            .into_iter()
            .chain(model.buffers())
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: p.shape.clone(),
                values: p.value.clone(),
            })
            .collect();
        Checkpoint {
            config: model.config(),
            tensors,
        }
    }

    pub fn push(&mut self, tensor: NamedTensor) {
        self.tensors.push(tensor);
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Rebuilds the model; every parameter and buffer must be present with its exact shape.
    pub fn restore(&self) -> Result<Model> {
        let mut model = Model::build(&self.config, 0)?;
        let by_name: BTreeMap<&str, &NamedTensor> = self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        for p in model.params_mut() {
            let t = by_name
                .get(p.name.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", p.name)))?;
            if t.shape != p.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, model expects {:?}",
                    p.name, t.shape, p.shape
                )));
            }
            p.value.clone_from(&t.values);
        }
        for b in model.buffers_mut() {
            let t = by_name
                .get(b.name.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", b.name)))?;
            if t.shape != b.shape {
                return Err(Error::Checkpoint(format!("buffer `{}` shape mismatch", b.name)));
            }
            b.value.clone_from(&t.values);
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        let config = self.config.to_kv().to_text();
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.take(1)?[0];
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config_len = r.u32()? as usize;
        let config_text = std::str::from_utf8(r.take(config_len)?)
            .map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
        let config = ModelConfig::from_kv(&KvMap::parse(config_text)?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor { name, shape, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BackboneConfig, Mode, NumericBatch, PlainCnnConfig};
    use crate::rng::{self, Stream};

    fn small_resnet() -> ModelConfig {
        ModelConfig::ResNet(BackboneConfig {
            stem_filters: 4,
            num_blocks: 3,
            filter_schedule: vec![4, 4, 8],
            ..BackboneConfig::default()
        })
    }

    #[test]
    fn round_trip_gives_identical_eval_logits() {
        for config in [
            small_resnet(),
            ModelConfig::PlainCnn(PlainCnnConfig { filters: vec![3], input_len: 20, ..Default::default() }),
        ] {
            let mut model = Model::build(&config, 7).unwrap();
            let x = NumericBatch::from_vec([2, 1, 20], (0..40).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap();
            // move running statistics away from their initial values
            let mut r = rng::stream(1, Stream::Dropout);
            model.forward(&x, Mode::Train, &mut r).unwrap();
            let before = model.forward(&x, Mode::Eval, &mut r).unwrap();

            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.ckpt");
            Checkpoint::capture(&model).save(&path).unwrap();
            let loaded = Checkpoint::load(&path).unwrap();
            assert_eq!(loaded.config, config);
            let mut restored = loaded.restore().unwrap();
            let after = restored.forward(&x, Mode::Eval, &mut r).unwrap();
            assert_eq!(
                before.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                after.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn rejects_bad_headers_and_truncation() {
        let bytes = Checkpoint::capture(&Model::build(&small_resnet(), 1).unwrap()).to_bytes();
        let mut wrong_version = bytes.clone();
        wrong_version[MAGIC.len()] = 2;
        assert!(matches!(Checkpoint::from_bytes(&wrong_version), Err(Error::Checkpoint(m)) if m.contains("version")));
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong_magic).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(Checkpoint::from_bytes(&trailing).is_err());
        assert!(Checkpoint::from_bytes(&bytes).is_ok());
    }

    #[test]
    fn missing_tensor_is_reported() {
        let mut ckpt = Checkpoint::capture(&Model::build(&small_resnet(), 1).unwrap());
        ckpt.tensors.retain(|t| t.name != "head.weight");
        assert!(matches!(ckpt.restore(), Err(Error::Checkpoint(m)) if m.contains("head.weight")));
    }
}
