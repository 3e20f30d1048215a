//! Multiview attribute perceiver.
//!
//! A variable number of view embeddings is fused into one `l × d` soft-prompt
//! sequence:
//!
//! 1. the [extractor] runs the soft prompts through decoder blocks against
//!    each view separately, giving one `l × d` output per view;
//! 2. the [sampler] assigns every view a scalar weight;
//! 3. the [aggregate] step forms the weighted sum of the per-view outputs.
//!
//! Steps 1 and 2 are permutation-equivariant and step 3 sums in a canonical
//! order, so the fused output does not depend on the order of the views.

pub mod aggregate;
pub mod config;
pub mod embedding;
pub mod extractor;
pub mod head;
pub mod params;
pub mod sampler;

pub use aggregate::{map_aggregate, SIMPLEX_TOLERANCE};
pub use config::{MapConfig, NormPlacement, SamplerQuery, SamplerScore};
pub use embedding::{project_embedding, ImageEmbedding, RawView, ViewVars};
pub use extractor::{visual_extract, visual_extract_all};
pub use head::{yes_no_head, NO, YES};
pub use params::{Extractor, ExtractorBlock, HeadParams, MapParams, ModelParams, SamplerHead, SamplerParams};
pub use sampler::{decompose_cls, sampler_weights};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::bind_frozen;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct MapOutput {
    /// `l × d` sequence handed to the decoder.
    pub fused_prompts: Tensor,
    pub per_view_weights: Vec<f64>,
    pub per_view_outputs: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct MapOutputVars {
    pub fused: Var,
    pub weights: Var,
    pub per_view: Vec<Var>,
}

impl MapOutputVars {
    pub fn read(&self, g: &Graph) -> MapOutput {
        MapOutput {
            fused_prompts: g.value(self.fused).clone(),
            per_view_weights: g.value(self.weights).data().to_vec(),
            per_view_outputs: self.per_view.iter().map(|&v| g.value(v).clone()).collect(),
        }
    }
}

/// Extractor, sampler and weighted sum over already-projected views.
pub fn map_forward_graph(
    g: &mut Graph,
    params: &MapParams<Var>,
    views: &[ViewVars],
    cfg: &MapConfig,
) -> Result<MapOutputVars> {
    if views.is_empty() {
        return Err(Error::EmptyViews { op: "map_forward" });
    }
    if let Some(cap) = cfg.max_views.filter(|&cap| views.len() > cap) {
        log::warn!(
            "map_forward: {} views exceed the configured soft cap of {cap}",
            views.len()
        );
    }
    let per_view = extractor::visual_extract_all_graph(g, params.prompts, views, &params.extractor, cfg)?;
    let weights = sampler::sampler_weights_graph(g, params.prompts, views, Some(&per_view), &params.sampler, cfg)?;
    let require_simplex = cfg.sampler_score == SamplerScore::Softmax;
    let fused = aggregate::map_aggregate_graph(g, &per_view, weights, require_simplex)?;
    Ok(MapOutputVars {
        fused,
        weights,
        per_view,
    })
}

/// Projects raw encoder views and runs the perceiver.
pub fn map_forward_raw_graph(
    g: &mut Graph,
    params: &MapParams<Var>,
    views: &[RawView],
    cfg: &MapConfig,
) -> Result<MapOutputVars> {
    let projected = views
        .iter()
        .map(|v| embedding::project_view(g, v, params.projection))
        .collect::<Result<Vec<_>>>()?;
    map_forward_graph(g, params, &projected, cfg)
}

pub fn map_forward(views: &[ImageEmbedding], params: &MapParams<Tensor>, cfg: &MapConfig) -> Result<MapOutput> {
    if let Some(v) = views.iter().find(|v| v.dim() != cfg.model_dim) {
        return Err(Error::Shape {
            op: "map_forward",
            lhs: vec![cfg.model_dim],
            rhs: v.patches.shape().to_vec(),
        });
    }
    let mut g = Graph::new();
    let p = bind_frozen(params, &mut g);
    let vs = views.iter().map(|v| v.bind(&mut g)).collect::<Result<Vec<_>>>()?;
    let out = map_forward_graph(&mut g, &p, &vs, cfg)?;
    Ok(out.read(&g))
}
