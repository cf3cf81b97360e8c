//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "CQVAECKP"
//! version  u32
//! config   u32 length + UTF-8 TOML (the run configuration)
//! state    u32 length + UTF-8 JSON (model kind, seed, epoch, step counters)
//! count    u32
//! tensors  count × { u32 name length, name, u32 rank, rank × u32 dims, f32 data }
//! ```
//!
//! Random state is fully described by the root seed and the epoch/step
//! counters, since every stream is derived from those.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CQVAECKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    CqVae,
    CqAe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub kind: ModelKind,
    pub seed: u64,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    /// Optimizer steps over the planned run, used by the temperature schedule.
    pub planned_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub state: TrainState,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, state: TrainState) -> Self {
        Self { config, state, tensors: Vec::new() }
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.tensors.push((name.into(), t.cast()));
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensor(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    /// Store every parameter under `prefix/name`.
    pub fn push_params<T: Scalar>(&mut self, prefix: &str, store: &ParamStore<T>) {
        for p in store.iter() {
            self.push(format!("{prefix}/{}", p.name), &p.value);
        }
    }

    pub fn push_list<T: Scalar>(&mut self, prefix: &str, store: &ParamStore<T>, values: &[Tensor<T>]) {
        for (p, v) in store.iter().zip(values) {
            self.push(format!("{prefix}/{}", p.name), v);
        }
    }

    /// Overwrite every parameter of `store` from `prefix/name` tensors.
    pub fn restore_params<T: Scalar>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        let values = self.read_list(prefix, store)?;
        let ids: Vec<_> = store.ids().collect();
        for (id, v) in ids.into_iter().zip(values) {
            store.set(id, v)?;
        }
        Ok(())
    }

    pub fn read_list<T: Scalar>(&self, prefix: &str, store: &ParamStore<T>) -> Result<Vec<Tensor<T>>> {
        store
            .iter()
            .map(|p| {
                let t = self.require(&format!("{prefix}/{}", p.name))?;
                if t.shape() != p.value.shape() {
                    return Err(Error::Checkpoint(format!(
                        "`{}` has shape {:?}, model expects {:?}",
                        p.name,
                        t.shape(),
                        p.value.shape()
                    )));
                }
                Ok(t.cast())
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_bytes(&mut out, self.config.to_toml_string().as_bytes());
        put_bytes(&mut out, serde_json::to_string(&self.state).expect("state serializes").as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_bytes(&mut out, name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let config = TrainConfig::from_toml_str(r.string()?)?;
        let state: TrainState = serde_json::from_str(r.string()?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?.to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 4)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after tensors".into()));
        }
        Ok(Self { config, state, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(Error::io(path))?)
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<&'a str> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Checkpoint("invalid UTF-8 in header".into()))
    }
}
