//! Multihead sampler: one scalar weight per view.
//!
//! Each view's CLS token is decomposed into `m` tokens by a 2-layer MLP.
//! Head `j` scores the soft prompts against the `j`-th decomposed token of
//! every view, normalises each prompt row over the views, and averages over
//! the prompt rows. The final weights are the mean over heads.

use super::config::{MapConfig, SamplerQuery, SamplerScore};
use super::embedding::{ImageEmbedding, ViewVars};
use super::params::SamplerParams;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{mlp2_forward, Activation};
use crate::params::bind_frozen;
use crate::tensor::Tensor;

/// `m × d`: row `j` is the view's `j`-th decomposed token.
pub fn decompose_cls_graph(g: &mut Graph, cls: Var, sampler: &SamplerParams<Var>, cfg: &MapConfig) -> Result<Var> {
    let out = mlp2_forward(g, cls, &sampler.decomposer, Activation::Gelu)?;
    g.reshape(out, &[cfg.sampler_heads, cfg.model_dim])
}

/// Sampler weights as a length-`n` vector.
///
/// `extractor_outputs` is only read when the config asks the extractor
/// outputs to act as queries.
pub fn sampler_weights_graph(
    g: &mut Graph,
    prompts: Var,
    views: &[ViewVars],
    extractor_outputs: Option<&[Var]>,
    sampler: &SamplerParams<Var>,
    cfg: &MapConfig,
) -> Result<Var> {
    if views.is_empty() {
        return Err(Error::EmptyViews { op: "sampler_weights" });
    }
    if sampler.heads.len() != cfg.sampler_heads {
        return Err(Error::Config(format!(
            "sampler has {} heads, config expects {}",
            sampler.heads.len(),
            cfg.sampler_heads
        )));
    }
    let n = views.len();
    let scale = 1.0 / (cfg.model_dim as f64).sqrt();
    let decomposed = views
        .iter()
        .map(|v| decompose_cls_graph(g, v.cls, sampler, cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut per_head = Vec::with_capacity(sampler.heads.len());
    for (j, head) in sampler.heads.iter().enumerate() {
        let tokens = decomposed
            .iter()
            .map(|&dec| g.slice(dec, 0, j, 1))
            .collect::<Result<Vec<_>>>()?;
        let scores = match cfg.sampler_query {
            SamplerQuery::SoftPrompts => {
                let stacked = g.concat(&tokens, 0)?;
                let q = g.matmul(prompts, head.w_q)?;
                let k = g.matmul(stacked, head.w_k)?;
                let kt = g.transpose(k)?;
                g.matmul(q, kt)?
            }
            SamplerQuery::ExtractorOutputs => {
                let outputs = extractor_outputs.ok_or_else(|| {
                    Error::Contract("sampler queries from extractor outputs, but none were given".into())
                })?;
                let mut columns = Vec::with_capacity(n);
                for (&o, &tok) in outputs.iter().zip(&tokens) {
                    let q = g.matmul(o, head.w_q)?;
                    let k = g.matmul(tok, head.w_k)?;
                    let kt = g.transpose(k)?;
                    columns.push(g.matmul(q, kt)?);
                }
                g.concat(&columns, 1)?
            }
        };
        let scores = g.scale(scores, scale);
        let scores = match cfg.sampler_score {
            SamplerScore::Softmax => g.softmax_rows(scores)?,
            SamplerScore::Raw => scores,
        };
        let weights = g.mean_axis(scores, 0)?;
        per_head.push(g.reshape(weights, &[1, n])?);
    }
    let stacked = g.concat(&per_head, 0)?;
    g.mean_axis(stacked, 0)
}

/// Decomposes a view's CLS token into `m` vectors of width `d`.
pub fn decompose_cls(view: &ImageEmbedding, sampler: &SamplerParams<Tensor>, cfg: &MapConfig) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let s = bind_frozen(sampler, &mut g);
    let v = view.bind(&mut g)?;
    let out = decompose_cls_graph(&mut g, v.cls, &s, cfg)?;
    let t = g.value(out);
    Ok((0..cfg.sampler_heads).map(|j| t.row(j).to_vec()).collect())
}

/// Sampler weights with the soft prompts as queries.
pub fn sampler_weights(
    prompts: &Tensor,
    views: &[ImageEmbedding],
    sampler: &SamplerParams<Tensor>,
    cfg: &MapConfig,
) -> Result<Vec<f64>> {
    if cfg.sampler_query != SamplerQuery::SoftPrompts {
        return Err(Error::Config(
            "sampler_weights needs extractor outputs in this query mode; use map_forward".into(),
        ));
    }
    let mut g = Graph::new();
    let p = g.constant(prompts.clone());
    let s = bind_frozen(sampler, &mut g);
    let vs = views.iter().map(|v| v.bind(&mut g)).collect::<Result<Vec<_>>>()?;
    let w = sampler_weights_graph(&mut g, p, &vs, None, &s, cfg)?;
    Ok(g.value(w).data().to_vec())
}
