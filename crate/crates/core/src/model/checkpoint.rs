//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "MEMLABCK"
//! version  u32
//! hlen     u64      length of the header
//! header   hlen     canonical JSON (sorted keys, compact)
//! count    u32      number of blobs
//! blob*    u32 name length, name (UTF-8), u32 ndim, ndim x u64 extents,
//!          numel x f32 values, u32 CRC-32 of the value bytes
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TransformerConfig;
use super::transformer::ModelState;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::util::canonical_json;

const MAGIC: &[u8; 8] = b"MEMLABCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: TransformerConfig,
    pub seed: u64,
    pub epoch: usize,
    pub update: u64,
    pub tokens_processed: u64,
    /// Free-form state owned by the caller (optimizer step, run id, ...).
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub blobs: Vec<(String, Tensor<f32>)>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| corrupt(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

impl Checkpoint {
    /// Header and blobs for a model's parameters; callers may append further
    /// blobs (optimizer moments) before writing.
    pub fn from_model(model: &ModelState<f32>, epoch: usize, update: u64, tokens_processed: u64) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                config: model.config().clone(),
                seed: model.seed(),
                epoch,
                update,
                tokens_processed,
                extra: serde_json::Value::Null,
            },
            blobs: model.params().to_vec(),
        }
    }

    /// Rebuilds the model from the blobs named in the config's layout.
    pub fn model(&self) -> Result<ModelState<f32>> {
        let n = ModelState::<f32>::build_layout_len(&self.header.config);
        if self.blobs.len() < n {
            return Err(corrupt("checkpoint holds fewer blobs than the model needs"));
        }
        ModelState::from_params(self.header.config.clone(), self.header.seed, self.blobs[..n].to_vec())
    }

    pub fn blob(&self, name: &str) -> Option<&Tensor<f32>> {
        self.blobs.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let header = canonical_json(&self.header)?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(header.as_bytes());
        buf.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for (name, t) in &self.blobs {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            let start = buf.len();
            for &v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            let crc = crc32fast::hash(&buf[start..]);
            buf.extend_from_slice(&crc.to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| corrupt(format!("write failed: {e}")))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let magic = read_exact::<8>(r)?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(read_exact(r)?);
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(read_exact(r)?) as usize;
        let mut hbuf = vec![0u8; hlen];
        r.read_exact(&mut hbuf)
            .map_err(|e| corrupt(format!("truncated header: {e}")))?;
        let header: CheckpointHeader = serde_json::from_slice(&hbuf)?;
        let count = u32::from_le_bytes(read_exact(r)?) as usize;
        let mut blobs = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = u32::from_le_bytes(read_exact(r)?) as usize;
            let mut nbuf = vec![0u8; nlen];
            r.read_exact(&mut nbuf)
                .map_err(|e| corrupt(format!("truncated name: {e}")))?;
            let name = String::from_utf8(nbuf).map_err(|_| corrupt("blob name is not UTF-8"))?;
            let ndim = u32::from_le_bytes(read_exact(r)?) as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(read_exact(r)?) as usize);
            }
            if shape.is_empty() || shape.contains(&0) {
                return Err(corrupt(format!("blob {name} has an invalid shape {shape:?}")));
            }
            let numel: usize = shape.iter().product();
            let mut raw = vec![0u8; numel * 4];
            r.read_exact(&mut raw)
                .map_err(|e| corrupt(format!("truncated blob {name}: {e}")))?;
            let crc = u32::from_le_bytes(read_exact(r)?);
            if crc != crc32fast::hash(&raw) {
                return Err(corrupt(format!("checksum mismatch in blob {name}")));
            }
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            blobs.push((name, Tensor::new(shape, data)));
        }
        Ok(Checkpoint { header, blobs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Task;

    fn model() -> ModelState<f32> {
        let cfg = TransformerConfig::new(1, 2, 8, 20)
            .with_max_seq_len(6)
            .with_task(Task::Causal);
        ModelState::build(cfg, 11).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = model();
        let mut ck = Checkpoint::from_model(&m, 3, 17, 999);
        ck.header.extra = serde_json::json!({"adam_step": 17});
        ck.blobs.push(("adam.m.tok_emb".into(), Tensor::full(&[20, 8], 0.5)));
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        let restored = back.model().unwrap();
        assert_eq!(restored, m);
        let seq = [1u32, 4, 9];
        assert_eq!(
            restored.forward(&[&seq]).unwrap()[0].data(),
            m.forward(&[&seq]).unwrap()[0].data()
        );
    }

    #[test]
    fn detects_corruption() {
        let ck = Checkpoint::from_model(&model(), 0, 0, 0);
        let mut bytes = ck.to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 10] ^= 0x40;
        let err = Checkpoint::read_from(&mut bytes.as_slice()).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn detects_truncation_and_magic() {
        let ck = Checkpoint::from_model(&model(), 0, 0, 0);
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::read_from(&mut &bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::read_from(&mut bad.as_slice()).is_err());
    }
}
