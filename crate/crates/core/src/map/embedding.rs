//! Per-view embeddings, their projection into model space, and the binary
//! embedding file.
//!
//! Embedding file layout, integers and floats little-endian:
//!
//! ```text
//! magic  8 bytes "MAPEMB01"
//! then one record per view until end of file:
//!   view_id_len u32, view_id (UTF-8)
//!   d_enc       u32
//!   p           u32  (patch tokens, at least 1)
//!   cls         f64 x d_enc
//!   patches     f64 x (p * d_enc), row-major
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::codec::Reader;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"MAPEMB01";

/// Encoder output for one view, before projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawView {
    pub view_id: String,
    pub cls: Vec<f64>,
    /// `p × d_enc`.
    pub patches: Tensor,
}

/// One view in model space: a CLS vector and `p × d` patch tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageEmbedding {
    pub view_id: String,
    pub cls: Vec<f64>,
    pub patches: Tensor,
}

impl RawView {
    pub fn new(view_id: impl Into<String>, cls: Vec<f64>, patches: Tensor) -> Result<Self> {
        let view = RawView {
            view_id: view_id.into(),
            cls,
            patches,
        };
        validate_tokens(&view.view_id, &view.cls, &view.patches)?;
        Ok(view)
    }

    pub fn dim(&self) -> usize {
        self.cls.len()
    }

    /// `(1 + p) × d_enc`, CLS first.
    pub fn tokens(&self) -> Tensor {
        stack_tokens(&self.cls, &self.patches)
    }
}

impl ImageEmbedding {
    pub fn new(view_id: impl Into<String>, cls: Vec<f64>, patches: Tensor) -> Result<Self> {
        let view = ImageEmbedding {
            view_id: view_id.into(),
            cls,
            patches,
        };
        validate_tokens(&view.view_id, &view.cls, &view.patches)?;
        Ok(view)
    }

    pub fn dim(&self) -> usize {
        self.cls.len()
    }

    pub fn bind(&self, g: &mut Graph) -> Result<ViewVars> {
        let cls = g.constant(Tensor::matrix(1, self.cls.len(), self.cls.clone())?);
        let patches = g.constant(self.patches.clone());
        Ok(ViewVars { cls, patches })
    }
}

fn validate_tokens(view_id: &str, cls: &[f64], patches: &Tensor) -> Result<()> {
    let (_, cols) = patches.dims2("view patches")?;
    if cls.is_empty() || cols != cls.len() {
        return Err(Error::Shape {
            op: "view tokens",
            lhs: vec![cls.len()],
            rhs: patches.shape().to_vec(),
        });
    }
    if !patches.is_finite() || cls.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("view {view_id} has non-finite entries")));
    }
    Ok(())
}

fn stack_tokens(cls: &[f64], patches: &Tensor) -> Tensor {
    let mut data = Vec::with_capacity(cls.len() + patches.numel());
    data.extend_from_slice(cls);
    data.extend_from_slice(patches.data());
    Tensor::new(vec![1 + patches.shape()[0], cls.len()], data).expect("validated view")
}

/// A projected view on a tape: CLS as `1 × d`, patches as `p × d`.
#[derive(Clone, Copy, Debug)]
pub struct ViewVars {
    pub cls: Var,
    pub patches: Var,
}

impl ViewVars {
    /// Key/value set for cross-attention.
    pub fn memory(&self, g: &mut Graph, include_cls: bool) -> Result<Var> {
        if include_cls {
            g.concat(&[self.cls, self.patches], 0)
        } else {
            Ok(self.patches)
        }
    }
}

/// Applies the `d_enc × d` projection to every token of `raw` on the tape.
pub fn project_view(g: &mut Graph, raw: &RawView, projection: Var) -> Result<ViewVars> {
    let (d_enc, _) = g.value(projection).dims2("project_embedding")?;
    if raw.dim() != d_enc {
        return Err(Error::Shape {
            op: "project_embedding",
            lhs: vec![raw.patches.shape()[0], raw.dim()],
            rhs: g.shape(projection).to_vec(),
        });
    }
    let tokens = g.constant(raw.tokens());
    let projected = g.matmul(tokens, projection)?;
    let p = raw.patches.shape()[0];
    let cls = g.slice(projected, 0, 0, 1)?;
    let patches = g.slice(projected, 0, 1, p)?;
    Ok(ViewVars { cls, patches })
}

/// Projects a raw view into model space.
pub fn project_embedding(raw: &RawView, projection: &Tensor) -> Result<ImageEmbedding> {
    let mut g = Graph::new();
    let w = g.constant(projection.clone());
    let vars = project_view(&mut g, raw, w)?;
    ImageEmbedding::new(
        raw.view_id.clone(),
        g.value(vars.cls).data().to_vec(),
        g.value(vars.patches).clone(),
    )
}

pub fn encode_views(views: &[RawView]) -> Vec<u8> {
    let mut out = Vec::from(&EMBEDDING_MAGIC[..]);
    for v in views {
        out.extend_from_slice(&(v.view_id.len() as u32).to_le_bytes());
        out.extend_from_slice(v.view_id.as_bytes());
        out.extend_from_slice(&(v.dim() as u32).to_le_bytes());
        out.extend_from_slice(&(v.patches.shape()[0] as u32).to_le_bytes());
        for x in v.cls.iter().chain(v.patches.data()) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_views(bytes: &[u8]) -> std::result::Result<Vec<RawView>, String> {
    let mut r = Reader::new(bytes);
    if r.take(8).ok() != Some(&EMBEDDING_MAGIC[..]) {
        return Err("not a MAPEMB01 embedding file".into());
    }
    let mut views = Vec::new();
    while !r.is_empty() {
        let view_id = r.string()?;
        let d_enc = r.u32()? as usize;
        let p = r.u32()? as usize;
        if d_enc == 0 || p == 0 {
            return Err(format!("view {view_id}: d_enc and p must be positive"));
        }
        let cls = r.f64s(d_enc)?;
        let patches = Tensor::matrix(p, d_enc, r.f64s(p * d_enc)?).map_err(|e| e.to_string())?;
        views.push(RawView::new(view_id, cls, patches).map_err(|e| e.to_string())?);
    }
    Ok(views)
}

pub fn write_views(path: &Path, views: &[RawView]) -> Result<()> {
    std::fs::write(path, encode_views(views)).map_err(|e| Error::io(path, e))
}

pub fn read_views(path: &Path) -> Result<Vec<RawView>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_views(&bytes).map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(id: &str, d: usize, p: usize, seed: f64) -> RawView {
        let cls = (0..d).map(|i| seed + i as f64).collect();
        let patches = Tensor::matrix(p, d, (0..p * d).map(|i| seed * 0.5 - i as f64).collect()).unwrap();
        RawView::new(id, cls, patches).unwrap()
    }

    #[test]
    fn identity_projection_is_a_no_op() {
        let v = raw("a", 3, 2, 1.5);
        let eye = Tensor::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let e = project_embedding(&v, &eye).unwrap();
        assert_eq!(e.cls, v.cls);
        assert_eq!(e.patches, v.patches);
        assert_eq!(e.view_id, "a");
    }

    #[test]
    fn zero_projection_annihilates() {
        let v = raw("b", 3, 4, -2.0);
        let e = project_embedding(&v, &Tensor::zeros(&[3, 5])).unwrap();
        assert_eq!(e.cls, vec![0.0; 5]);
        assert!(e.patches.data().iter().all(|&x| x == 0.0));
        assert_eq!(e.patches.shape(), &[4, 5]);
    }

    #[test]
    fn projection_dimension_mismatch() {
        let v = raw("c", 3, 1, 0.0);
        assert_eq!(
            project_embedding(&v, &Tensor::zeros(&[4, 4])).unwrap_err().kind(),
            "shape"
        );
    }

    #[test]
    fn rejects_non_finite_and_mismatched_tokens() {
        assert!(RawView::new("x", vec![f64::NAN], Tensor::zeros(&[1, 1])).is_err());
        assert!(RawView::new("x", vec![0.0, 1.0], Tensor::zeros(&[1, 3])).is_err());
    }

    proptest! {
        #[test]
        fn view_file_round_trip(specs in prop::collection::vec((1usize..5, 1usize..4, -1e3f64..1e3), 0..6)) {
            let views: Vec<RawView> = specs
                .iter()
                .enumerate()
                .map(|(i, &(d, p, s))| raw(&format!("scene/{i}"), d, p, s))
                .collect();
            prop_assert_eq!(decode_views(&encode_views(&views)).unwrap(), views);
        }
    }
}
