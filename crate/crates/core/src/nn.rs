//! Layer building blocks recorded on a [`Graph`].

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::param_tree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
    Identity,
}

/// Two affine layers with an activation in between.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp2<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}
param_tree!(Mlp2 {
    leaves: [w1, b1, w2, b2],
    nodes: [],
    lists: []
});

/// Query/key/value/output projections of one attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention<T> {
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    pub w_o: T,
}
param_tree!(Attention {
    leaves: [w_q, w_k, w_v, w_o],
    nodes: [],
    lists: []
});

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: T,
    pub beta: T,
}
param_tree!(LayerNorm {
    leaves: [gamma, beta],
    nodes: [],
    lists: []
});

/// `activation(x W1 + b1) W2 + b2` for every row of `x`.
pub fn mlp2_forward(g: &mut Graph, x: Var, p: &Mlp2<Var>, activation: Activation) -> Result<Var> {
    let h = g.matmul(x, p.w1)?;
    let h = g.add_bias(h, p.b1)?;
    let h = match activation {
        Activation::Gelu => g.gelu(h),
        Activation::Identity => h,
    };
    let out = g.matmul(h, p.w2)?;
    g.add_bias(out, p.b2)
}

pub fn layer_norm(g: &mut Graph, x: Var, p: &LayerNorm<Var>, eps: f64) -> Result<Var> {
    g.layer_norm(x, p.gamma, p.beta, eps)
}

/// Multi-head scaled dot-product attention of `queries` over `memory`.
///
/// Each head sees a contiguous `d / heads` column block of the projected
/// queries, keys and values and scales its scores by `1/sqrt(d / heads)`.
/// Head outputs are concatenated and mapped through `w_o`.
pub fn multi_head_attention(g: &mut Graph, queries: Var, memory: Var, p: &Attention<Var>, heads: usize) -> Result<Var> {
    let q = g.matmul(queries, p.w_q)?;
    let k = g.matmul(memory, p.w_k)?;
    let v = g.matmul(memory, p.w_v)?;
    let d = g.shape(q)[1];
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "model width {d} is not divisible into {heads} heads"
        )));
    }
    let width = d / heads;
    let scale = 1.0 / (width as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice(q, 1, h * width, width)?,
                g.slice(k, 1, h * width, width)?,
                g.slice(v, 1, h * width, width)?,
            )
        };
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let attn = g.softmax_rows(scores)?;
        outputs.push(g.matmul(attn, vh)?);
    }
    let merged = if heads == 1 { outputs[0] } else { g.concat(&outputs, 1)? };
    g.matmul(merged, p.w_o)
}

/// Sums `terms` with a balanced binary tree, splitting at `len / 2`.
pub fn tree_sum(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    match terms.len() {
        0 => Err(Error::Contract("sum of no terms".into())),
        1 => Ok(terms[0]),
        n => {
            let (lo, hi) = terms.split_at(n / 2);
            let a = tree_sum(g, lo)?;
            let b = tree_sum(g, hi)?;
            g.add(a, b)
        }
    }
}
