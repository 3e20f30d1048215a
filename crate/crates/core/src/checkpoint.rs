//! Parameter checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   "MAPCKPT1"
//! meta_len   u64
//! meta       meta_len bytes of UTF-8 JSON (free-form metadata)
//! count      u32       number of tensors
//! repeated count times:
//!   name_len u32, name (UTF-8)
//!   rank     u32, dims (u64 x rank)
//!   values   f64 x product(dims), row-major
//! ```
//!
//! The version digit in the magic changes only if the layout does.

use std::path::Path;

use crate::codec::Reader;
use crate::error::{Error, Result};
use crate::params::ParamTree;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MAPCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_tree<P: ParamTree<Tensor>>(tree: &P, meta: serde_json::Value) -> Self {
        let mut tensors = Vec::new();
        tree.visit("", &mut |name, t| tensors.push((name.to_string(), t.clone())));
        Checkpoint { meta, tensors }
    }

    /// Overwrites every leaf of `tree` with the tensor of the same name.
    /// Names and shapes must match exactly.
    pub fn load_into<P: ParamTree<Tensor>>(&self, tree: &mut P) -> Result<()> {
        let mut expected = Vec::new();
        tree.visit("", &mut |name, t| expected.push((name.to_string(), t.shape().to_vec())));
        if expected.len() != self.tensors.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for ((name, shape), (stored, t)) in expected.iter().zip(&self.tensors) {
            if name != stored || shape.as_slice() != t.shape() {
                return Err(Error::Data(format!(
                    "checkpoint entry {stored} {:?} does not match model parameter {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        let mut i = 0;
        tree.visit_mut("", &mut |_, t| {
            *t = self.tensors[i].1.clone();
            i += 1;
        });
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("JSON values always serialize");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != MAGIC {
            return Err("not a MAPCKPT1 checkpoint".into());
        }
        let meta_len = r.u64()? as usize;
        let meta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| format!("metadata: {e}"))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or("tensor size overflows")?;
            let data = r.f64s(numel)?;
            let t = Tensor::new(shape, data).map_err(|e| format!("{name}: {e}"))?;
            tensors.push((name, t));
        }
        if !r.is_empty() {
            return Err(format!("{} trailing bytes", r.remaining()));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| Error::format(path, e))
    }
}
