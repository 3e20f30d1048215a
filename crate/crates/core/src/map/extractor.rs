//! Visual extractor: a stack of decoder blocks in which the soft prompts
//! cross-attend to a single view.
//!
//! Every view is processed independently with the same prompts and weights;
//! no state flows between views.

use super::config::{MapConfig, NormPlacement};
use super::embedding::{ImageEmbedding, ViewVars};
use super::params::{Extractor, ExtractorBlock};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{layer_norm, mlp2_forward, multi_head_attention, Activation};
use crate::params::bind_frozen;
use crate::tensor::Tensor;

fn block_forward(g: &mut Graph, x: Var, memory: Var, block: &ExtractorBlock<Var>, cfg: &MapConfig) -> Result<Var> {
    let heads = cfg.num_attn_heads;
    let eps = cfg.layer_norm_eps;
    match cfg.norm_placement {
        NormPlacement::Pre => {
            let h = layer_norm(g, x, &block.norm_self, eps)?;
            let a = multi_head_attention(g, h, h, &block.self_attn, heads)?;
            let x = g.add(x, a)?;
            let h = layer_norm(g, x, &block.norm_cross, eps)?;
            let a = multi_head_attention(g, h, memory, &block.cross_attn, heads)?;
            let x = g.add(x, a)?;
            let h = layer_norm(g, x, &block.norm_ffn, eps)?;
            let f = mlp2_forward(g, h, &block.ffn, Activation::Gelu)?;
            g.add(x, f)
        }
        NormPlacement::Post => {
            let a = multi_head_attention(g, x, x, &block.self_attn, heads)?;
            let x = g.add(x, a)?;
            let x = layer_norm(g, x, &block.norm_self, eps)?;
            let a = multi_head_attention(g, x, memory, &block.cross_attn, heads)?;
            let x = g.add(x, a)?;
            let x = layer_norm(g, x, &block.norm_cross, eps)?;
            let f = mlp2_forward(g, x, &block.ffn, Activation::Gelu)?;
            let x = g.add(x, f)?;
            layer_norm(g, x, &block.norm_ffn, eps)
        }
    }
}

/// Runs the prompts through every block against one view; returns `l × d`.
pub fn visual_extract_graph(
    g: &mut Graph,
    prompts: Var,
    view: &ViewVars,
    extractor: &Extractor<Var>,
    cfg: &MapConfig,
) -> Result<Var> {
    let memory = view.memory(g, cfg.kv_include_cls)?;
    if g.shape(memory)[1] != g.shape(prompts)[1] {
        return Err(Error::Shape {
            op: "visual_extract",
            lhs: g.shape(prompts).to_vec(),
            rhs: g.shape(memory).to_vec(),
        });
    }
    let mut x = prompts;
    for block in &extractor.blocks {
        x = block_forward(g, x, memory, block, cfg)?;
    }
    match cfg.norm_placement {
        NormPlacement::Pre => layer_norm(g, x, &extractor.final_norm, cfg.layer_norm_eps),
        NormPlacement::Post => Ok(x),
    }
}

/// One extractor output per view, in input order.
pub fn visual_extract_all_graph(
    g: &mut Graph,
    prompts: Var,
    views: &[ViewVars],
    extractor: &Extractor<Var>,
    cfg: &MapConfig,
) -> Result<Vec<Var>> {
    if views.is_empty() {
        return Err(Error::EmptyViews {
            op: "visual_extract_all",
        });
    }
    views
        .iter()
        .map(|v| visual_extract_graph(g, prompts, v, extractor, cfg))
        .collect()
}

pub fn visual_extract(
    prompts: &Tensor,
    view: &ImageEmbedding,
    extractor: &Extractor<Tensor>,
    cfg: &MapConfig,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = g.constant(prompts.clone());
    let ext = bind_frozen(extractor, &mut g);
    let v = view.bind(&mut g)?;
    let out = visual_extract_graph(&mut g, p, &v, &ext, cfg)?;
    Ok(g.value(out).clone())
}

pub fn visual_extract_all(
    prompts: &Tensor,
    views: &[ImageEmbedding],
    extractor: &Extractor<Tensor>,
    cfg: &MapConfig,
) -> Result<Vec<Tensor>> {
    if views.is_empty() {
        return Err(Error::EmptyViews {
            op: "visual_extract_all",
        });
    }
    views
        .iter()
        .map(|v| visual_extract(prompts, v, extractor, cfg))
        .collect()
}
