//! Single-file checkpoint archive.
//!
//! Layout: the 8-byte magic `TISTCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a UTF-8 JSON header, then the raw
//! little-endian `f32` payload. The header holds the run metadata and an index
//! of named tensors (shape, offset and length in elements into the payload).
//! Values are stored bit-exactly so that a resumed run replays identically.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Optimizer, OptimizerConfig, SegmentationNetwork, UNet};
use crate::error::{Error, Result};
use crate::rng::derive_rng;

const MAGIC: &[u8; 8] = b"TISTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Number of completed epochs.
    pub epoch: usize,
    pub config_hash: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub optimizer_steps: u64,
    /// All random streams are derived from `(seed, epoch, ...)`; this is the
    /// next epoch whose streams a resumed run must draw.
    pub next_rng_epoch: usize,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<IndexEntry>,
}

impl Checkpoint {
    pub fn capture(meta: CheckpointMeta, model: &UNet<f32>, optimizer: &Optimizer<f32>) -> Self {
        let names = model.param_names();
        let mut tensors: Vec<NamedTensor> = names
            .iter()
            .zip(model.param_shapes())
            .zip(model.params())
            .map(|((n, s), p)| NamedTensor {
                name: n.clone(),
                shape: s,
                data: p.to_vec(),
            })
            .collect();
        for (name, data) in optimizer.state_tensors(&names) {
            tensors.push(NamedTensor {
                name,
                shape: vec![data.len()],
                data: data.to_vec(),
            });
        }
        Self { meta, tensors }
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Rebuilds the model and optimiser state.
    pub fn restore(&self) -> Result<(UNet<f32>, Optimizer<f32>)> {
        let mut model = UNet::<f32>::new(self.meta.model.clone(), &mut derive_rng(0, &[]))?;
        let names = model.param_names();
        let shapes = model.param_shapes();
        for ((name, shape), dst) in names.iter().zip(&shapes).zip(model.params_mut()) {
            let t = self
                .tensor(name)
                .ok_or_else(|| Error::InvalidInput(format!("checkpoint lacks tensor `{name}`")))?;
            if &t.shape != shape {
                return Err(Error::InvalidInput(format!(
                    "tensor `{name}` has shape {:?}, model expects {shape:?}",
                    t.shape
                )));
            }
            dst.copy_from_slice(&t.data);
        }
        let mut optimizer = Optimizer::new(self.meta.optimizer, &model.params())?;
        optimizer.restore(self.meta.optimizer_steps, &names, |k| {
            self.tensor(k).map(|t| t.data.clone())
        })?;
        Ok((model, optimizer))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut offset = 0;
        let index = self
            .tensors
            .iter()
            .map(|t| {
                let e = IndexEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                    len: t.data.len(),
                };
                offset += t.data.len();
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            tensors: index,
        })?;
        let mut buf = Vec::with_capacity(20 + header.len() + 4 * offset);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        for t in &self.tensors {
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        // Write-then-rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("partial");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |message: &str| Error::Checkpoint {
            path: path.to_path_buf(),
            message: message.to_string(),
        };
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..body]).map_err(|e| bad(&e.to_string()))?;
        let payload = &bytes[body..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let start = e.offset * 4;
            let end = start + e.len * 4;
            if end > payload.len() {
                return Err(bad(&format!("tensor `{}` exceeds payload", e.name)));
            }
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(NamedTensor {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Gradients;

    #[test]
    fn save_load_restore_is_bit_exact() {
        let cfg = ModelConfig {
            base_width: 2,
            ..Default::default()
        };
        let mut model = UNet::<f32>::new(cfg.clone(), &mut derive_rng(3, &[])).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::adam(), &model.params()).unwrap();
        let grads = Gradients {
            tensors: model.params().iter().map(|p| p.iter().map(|v| v * 0.1 + 0.01).collect()).collect(),
        };
        opt.step(model.params_mut(), &grads, 1e-3);
        let meta = CheckpointMeta {
            epoch: 3,
            config_hash: "abc".into(),
            seed: 9,
            model: cfg,
            optimizer: *opt.config(),
            optimizer_steps: opt.steps(),
            next_rng_epoch: 3,
            extra: serde_json::json!({"best": 0.5}),
        };
        let ck = Checkpoint::capture(meta, &model, &opt);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let (m2, o2) = back.restore().unwrap();
        assert_eq!(m2, model);
        assert_eq!(o2, opt);
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint { .. })));
    }
}
