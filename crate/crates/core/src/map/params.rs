//! Learned parameters of the perceiver and the yes/no decoding head.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::MapConfig;
use crate::nn::{Attention, LayerNorm, Mlp2};
use crate::params::{normal, param_tree, uniform_fan_in};
use crate::tensor::Tensor;

/// One decoder block: prompt self-attention, cross-attention into a view,
/// feed-forward, each wrapped with a residual and a layer norm.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorBlock<T> {
    pub self_attn: Attention<T>,
    pub cross_attn: Attention<T>,
    pub ffn: Mlp2<T>,
    pub norm_self: LayerNorm<T>,
    pub norm_cross: LayerNorm<T>,
    pub norm_ffn: LayerNorm<T>,
}
param_tree!(ExtractorBlock {
    leaves: [],
    nodes: [self_attn, cross_attn, ffn, norm_self, norm_cross, norm_ffn],
    lists: []
});

#[derive(Clone, Debug, PartialEq)]
pub struct Extractor<T> {
    pub blocks: Vec<ExtractorBlock<T>>,
    /// Applied after the stack in pre-norm mode only.
    pub final_norm: LayerNorm<T>,
}
param_tree!(Extractor {
    leaves: [],
    nodes: [final_norm],
    lists: [blocks]
});

/// Query/key maps of one sampler head.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplerHead<T> {
    pub w_q: T,
    pub w_k: T,
}
param_tree!(SamplerHead {
    leaves: [w_q, w_k],
    nodes: [],
    lists: []
});

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerParams<T> {
    /// Maps a view's CLS token (width d) to `m * d` values, read as m tokens.
    pub decomposer: Mlp2<T>,
    pub heads: Vec<SamplerHead<T>>,
}
param_tree!(SamplerParams {
    leaves: [],
    nodes: [decomposer],
    lists: [heads]
});

#[derive(Clone, Debug, PartialEq)]
pub struct MapParams<T> {
    /// `d_enc × d` projection applied to raw encoder tokens.
    pub projection: T,
    /// Soft prompts, `l × d`.
    pub prompts: T,
    pub extractor: Extractor<T>,
    pub sampler: SamplerParams<T>,
}
param_tree!(MapParams {
    leaves: [projection, prompts],
    nodes: [extractor, sampler],
    lists: []
});

/// Small stand-in decoder that reads fused prompts and answers Yes or No.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T> {
    /// Token embeddings, `vocab × d`.
    pub embedding: T,
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    /// `d × 2`, columns ordered (Yes, No).
    pub w_out: T,
    pub b_out: T,
}
param_tree!(HeadParams {
    leaves: [embedding, w_q, w_k, w_v, w_out, b_out],
    nodes: [],
    lists: []
});

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub map: MapParams<T>,
    pub head: HeadParams<T>,
}
param_tree!(ModelParams {
    leaves: [],
    nodes: [map, head],
    lists: []
});

fn attention(rng: &mut impl Rng, d: usize) -> Attention<Tensor> {
    Attention {
        w_q: uniform_fan_in(rng, d, &[d, d]),
        w_k: uniform_fan_in(rng, d, &[d, d]),
        w_v: uniform_fan_in(rng, d, &[d, d]),
        w_o: uniform_fan_in(rng, d, &[d, d]),
    }
}

fn mlp2(rng: &mut impl Rng, d_in: usize, hidden: usize, d_out: usize) -> Mlp2<Tensor> {
    Mlp2 {
        w1: uniform_fan_in(rng, d_in, &[d_in, hidden]),
        b1: Tensor::zeros(&[hidden]),
        w2: uniform_fan_in(rng, hidden, &[hidden, d_out]),
        b2: Tensor::zeros(&[d_out]),
    }
}

fn layer_norm(d: usize) -> LayerNorm<Tensor> {
    LayerNorm {
        gamma: Tensor::ones(&[d]),
        beta: Tensor::zeros(&[d]),
    }
}

impl MapParams<Tensor> {
    pub fn init(cfg: &MapConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.model_dim;
        let projection = uniform_fan_in(rng, cfg.encoder_dim, &[cfg.encoder_dim, d]);
        let prompts = normal(rng, 0.02, &[cfg.prompt_tokens, d]);
        let blocks = (0..cfg.num_blocks)
            .map(|_| ExtractorBlock {
                self_attn: attention(rng, d),
                cross_attn: attention(rng, d),
                ffn: mlp2(rng, d, cfg.ffn_hidden, d),
                norm_self: layer_norm(d),
                norm_cross: layer_norm(d),
                norm_ffn: layer_norm(d),
            })
            .collect();
        let decomposer = mlp2(rng, d, cfg.decomposer_hidden, cfg.sampler_heads * d);
        let heads = (0..cfg.sampler_heads)
            .map(|_| SamplerHead {
                w_q: uniform_fan_in(rng, d, &[d, d]),
                w_k: uniform_fan_in(rng, d, &[d, d]),
            })
            .collect();
        MapParams {
            projection,
            prompts,
            extractor: Extractor {
                blocks,
                final_norm: layer_norm(d),
            },
            sampler: SamplerParams { decomposer, heads },
        }
    }
}

impl HeadParams<Tensor> {
    pub fn init(cfg: &MapConfig, vocab_size: usize, rng: &mut impl Rng) -> Self {
        let d = cfg.model_dim;
        HeadParams {
            embedding: normal(rng, 1.0, &[vocab_size, d]),
            w_q: uniform_fan_in(rng, d, &[d, d]),
            w_k: uniform_fan_in(rng, d, &[d, d]),
            w_v: uniform_fan_in(rng, d, &[d, d]),
            w_out: uniform_fan_in(rng, d, &[d, 2]),
            b_out: Tensor::zeros(&[2]),
        }
    }

    pub fn zeros(cfg: &MapConfig, vocab_size: usize) -> Self {
        let d = cfg.model_dim;
        HeadParams {
            embedding: Tensor::zeros(&[vocab_size, d]),
            w_q: Tensor::zeros(&[d, d]),
            w_k: Tensor::zeros(&[d, d]),
            w_v: Tensor::zeros(&[d, d]),
            w_out: Tensor::zeros(&[d, 2]),
            b_out: Tensor::zeros(&[2]),
        }
    }
}

impl ModelParams<Tensor> {
    /// Seeded from `cfg.init_seed`.
    pub fn init(cfg: &MapConfig, vocab_size: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let map = MapParams::init(cfg, &mut rng);
        let head = HeadParams::init(cfg, vocab_size, &mut rng);
        ModelParams { map, head }
    }
}
