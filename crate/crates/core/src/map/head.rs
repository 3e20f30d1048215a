//! Yes/No decoding head standing in for the frozen language model.
//!
//! Question tokens are embedded and attend once over the fused prompt
//! sequence (with a residual connection), the token states are mean-pooled,
//! and a linear map produces the two logits `[yes, no]`.

use super::config::MapConfig;
use super::params::HeadParams;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::bind_frozen;
use crate::tensor::Tensor;

/// Logit columns.
pub const YES: usize = 0;
pub const NO: usize = 1;

/// `1 × 2` logits for one question over a `k × d` prompt sequence.
pub fn yes_no_head_graph(g: &mut Graph, fused: Var, tokens: &[usize], head: &HeadParams<Var>) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::Contract("question has no tokens".into()));
    }
    let x = g.embedding(head.embedding, tokens)?;
    let d = g.shape(x)[1];
    let q = g.matmul(x, head.w_q)?;
    let k = g.matmul(fused, head.w_k)?;
    let v = g.matmul(fused, head.w_v)?;
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
    let attn = g.softmax_rows(scores)?;
    let read = g.matmul(attn, v)?;
    let mixed = g.add(x, read)?;
    let pooled = g.mean_axis(mixed, 0)?;
    let pooled = g.reshape(pooled, &[1, d])?;
    let logits = g.matmul(pooled, head.w_out)?;
    g.add_bias(logits, head.b_out)
}

pub fn yes_no_head(fused: &Tensor, tokens: &[usize], head: &HeadParams<Tensor>, cfg: &MapConfig) -> Result<[f64; 2]> {
    let (_, d) = fused.dims2("yes_no_head")?;
    if d != cfg.model_dim {
        return Err(Error::Shape {
            op: "yes_no_head",
            lhs: fused.shape().to_vec(),
            rhs: vec![cfg.model_dim],
        });
    }
    let mut g = Graph::new();
    let f = g.constant(fused.clone());
    let h = bind_frozen(head, &mut g);
    let out = yes_no_head_graph(&mut g, f, tokens, &h)?;
    let v = g.value(out).data();
    Ok([v[YES], v[NO]])
}
