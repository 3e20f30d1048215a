//! Loop-level reference implementations used as test oracles.
//!
//! Nothing here touches the tape; every formula is written out with plain
//! nested loops over `Vec<Vec<f64>>`.

#![allow(dead_code)]

use miavlm::map::{
    Extractor, HeadParams, ImageEmbedding, MapConfig, MapParams, NormPlacement, SamplerParams, SamplerQuery,
    SamplerScore,
};
use miavlm::nn::{Attention, LayerNorm, Mlp2};
use miavlm::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn mat(t: &Tensor) -> Mat {
    match t.shape() {
        [n] => vec![t.data().to_vec().into_iter().take(*n).collect()],
        [r, c] => (0..*r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect(),
        s => panic!("unsupported shape {s:?}"),
    }
}

pub fn vec1(t: &Tensor) -> Vec<f64> {
    t.data().to_vec()
}

pub fn tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn max_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut worst: f64 = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        assert_eq!(ra.len(), rb.len());
        for (x, y) in ra.iter().zip(rb) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

pub fn random_mat(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

pub fn random_view(rng: &mut impl Rng, id: &str, patches: usize, dim: usize) -> ImageEmbedding {
    let cls = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    ImageEmbedding::new(id, cls, random_tensor(rng, &[patches, dim], 1.0)).unwrap()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let k = b.len();
    let m = b[0].len();
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        assert_eq!(a[i].len(), k);
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn add_row(a: &Mat, bias: &[f64]) -> Mat {
    a.iter()
        .map(|r| r.iter().zip(bias).map(|(x, b)| x + b).collect())
        .collect()
}

pub fn scale(a: &Mat, s: f64) -> Mat {
    a.iter().map(|r| r.iter().map(|x| x * s).collect()).collect()
}

pub fn cols(a: &Mat, start: usize, len: usize) -> Mat {
    a.iter().map(|r| r[start..start + len].to_vec()).collect()
}

pub fn hcat(parts: &[Mat]) -> Mat {
    (0..parts[0].len())
        .map(|i| parts.iter().flat_map(|p| p[i].iter().copied()).collect())
        .collect()
}

/// Neumaier-compensated sum.
pub fn ksum(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for &x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

/// Softmax of one row via log-sum-exp.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
    let lse = mx + ksum(&exps).ln();
    row.iter().map(|x| (x - lse).exp()).collect()
}

pub fn softmax_rows(a: &Mat) -> Mat {
    a.iter().map(|r| softmax(r)).collect()
}

pub fn mean_rows(a: &Mat) -> Vec<f64> {
    let n = a.len() as f64;
    (0..a[0].len())
        .map(|j| ksum(&a.iter().map(|r| r[j]).collect::<Vec<_>>()) / n)
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

pub fn layer_norm(x: &Mat, p: &LayerNorm<Tensor>, eps: f64) -> Mat {
    let gamma = vec1(&p.gamma);
    let beta = vec1(&p.beta);
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = ksum(r) / n;
            let var = ksum(&r.iter().map(|v| (v - mean) * (v - mean)).collect::<Vec<_>>()) / n;
            let inv = 1.0 / (var + eps).sqrt();
            r.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) * inv * gamma[j] + beta[j])
                .collect()
        })
        .collect()
}

pub fn mlp(x: &Mat, p: &Mlp2<Tensor>) -> Mat {
    let h = add_row(&matmul(x, &mat(&p.w1)), &vec1(&p.b1));
    let h: Mat = h.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
    add_row(&matmul(&h, &mat(&p.w2)), &vec1(&p.b2))
}

pub fn attention(queries: &Mat, memory: &Mat, p: &Attention<Tensor>, heads: usize) -> Mat {
    let q = matmul(queries, &mat(&p.w_q));
    let k = matmul(memory, &mat(&p.w_k));
    let v = matmul(memory, &mat(&p.w_v));
    let width = q[0].len() / heads;
    let outs: Vec<Mat> = (0..heads)
        .map(|h| {
            let qh = cols(&q, h * width, width);
            let kh = cols(&k, h * width, width);
            let vh = cols(&v, h * width, width);
            let scores = scale(&matmul(&qh, &transpose(&kh)), 1.0 / (width as f64).sqrt());
            matmul(&softmax_rows(&scores), &vh)
        })
        .collect();
    matmul(&hcat(&outs), &mat(&p.w_o))
}

pub fn memory(view: &ImageEmbedding, cfg: &MapConfig) -> Mat {
    let mut m = Vec::new();
    if cfg.kv_include_cls {
        m.push(view.cls.clone());
    }
    m.extend(mat(&view.patches));
    m
}

pub fn extract(prompts: &Tensor, view: &ImageEmbedding, ext: &Extractor<Tensor>, cfg: &MapConfig) -> Mat {
    let mem = memory(view, cfg);
    let heads = cfg.num_attn_heads;
    let eps = cfg.layer_norm_eps;
    let mut x = mat(prompts);
    for b in &ext.blocks {
        match cfg.norm_placement {
            NormPlacement::Pre => {
                let h = layer_norm(&x, &b.norm_self, eps);
                x = add(&x, &attention(&h, &h, &b.self_attn, heads));
                let h = layer_norm(&x, &b.norm_cross, eps);
                x = add(&x, &attention(&h, &mem, &b.cross_attn, heads));
                let h = layer_norm(&x, &b.norm_ffn, eps);
                x = add(&x, &mlp(&h, &b.ffn));
            }
            NormPlacement::Post => {
                x = layer_norm(&add(&x, &attention(&x, &x, &b.self_attn, heads)), &b.norm_self, eps);
                x = layer_norm(&add(&x, &attention(&x, &mem, &b.cross_attn, heads)), &b.norm_cross, eps);
                x = layer_norm(&add(&x, &mlp(&x, &b.ffn)), &b.norm_ffn, eps);
            }
        }
    }
    match cfg.norm_placement {
        NormPlacement::Pre => layer_norm(&x, &ext.final_norm, eps),
        NormPlacement::Post => x,
    }
}

/// `m` decomposed tokens of one view.
pub fn decompose(view: &ImageEmbedding, s: &SamplerParams<Tensor>, cfg: &MapConfig) -> Mat {
    let flat = mlp(&vec![view.cls.clone()], &s.decomposer).remove(0);
    let d = cfg.model_dim;
    (0..cfg.sampler_heads)
        .map(|j| flat[j * d..(j + 1) * d].to_vec())
        .collect()
}

/// Sampler weights; `outputs` are the extractor outputs, read only when they
/// act as queries.
pub fn sampler(
    prompts: &Tensor,
    views: &[ImageEmbedding],
    outputs: &[Mat],
    s: &SamplerParams<Tensor>,
    cfg: &MapConfig,
) -> Vec<f64> {
    let n = views.len();
    let dec: Vec<Mat> = views.iter().map(|v| decompose(v, s, cfg)).collect();
    let sc = 1.0 / (cfg.model_dim as f64).sqrt();
    let l = cfg.prompt_tokens;
    let mut per_head = Vec::new();
    for (j, head) in s.heads.iter().enumerate() {
        let wq = mat(&head.w_q);
        let wk = mat(&head.w_k);
        let mut scores = vec![vec![0.0; n]; l];
        for i in 0..n {
            let query = match cfg.sampler_query {
                SamplerQuery::SoftPrompts => mat(prompts),
                SamplerQuery::ExtractorOutputs => outputs[i].clone(),
            };
            let q = matmul(&query, &wq);
            let k = matmul(&vec![dec[i][j].clone()], &wk).remove(0);
            for r in 0..l {
                let mut dot = 0.0;
                for c in 0..k.len() {
                    dot += q[r][c] * k[c];
                }
                scores[r][i] = dot * sc;
            }
        }
        if cfg.sampler_score == SamplerScore::Softmax {
            scores = softmax_rows(&scores);
        }
        per_head.push(mean_rows(&scores));
    }
    mean_rows(&per_head)
}

pub fn aggregate(outputs: &[Mat], weights: &[f64]) -> Mat {
    let rows = outputs[0].len();
    let cols = outputs[0][0].len();
    (0..rows)
        .map(|r| {
            (0..cols)
                .map(|c| {
                    ksum(
                        &outputs
                            .iter()
                            .zip(weights)
                            .map(|(o, w)| w * o[r][c])
                            .collect::<Vec<_>>(),
                    )
                })
                .collect()
        })
        .collect()
}

pub struct Forward {
    pub fused: Mat,
    pub weights: Vec<f64>,
    pub outputs: Vec<Mat>,
}

pub fn map_forward(views: &[ImageEmbedding], p: &MapParams<Tensor>, cfg: &MapConfig) -> Forward {
    let outputs: Vec<Mat> = views
        .iter()
        .map(|v| extract(&p.prompts, v, &p.extractor, cfg))
        .collect();
    let weights = sampler(&p.prompts, views, &outputs, &p.sampler, cfg);
    Forward {
        fused: aggregate(&outputs, &weights),
        weights,
        outputs,
    }
}

pub fn head(fused: &Mat, tokens: &[usize], h: &HeadParams<Tensor>) -> [f64; 2] {
    let table = mat(&h.embedding);
    let x: Mat = tokens.iter().map(|&t| table[t].clone()).collect();
    let d = x[0].len();
    let q = matmul(&x, &mat(&h.w_q));
    let k = matmul(fused, &mat(&h.w_k));
    let v = matmul(fused, &mat(&h.w_v));
    let attn = softmax_rows(&scale(&matmul(&q, &transpose(&k)), 1.0 / (d as f64).sqrt()));
    let mixed = add(&x, &matmul(&attn, &v));
    let pooled = mean_rows(&mixed);
    let logits = add_row(&matmul(&vec![pooled], &mat(&h.w_out)), &vec1(&h.b_out)).remove(0);
    [logits[0], logits[1]]
}

/// Tiny config for oracle and gradient checks.
pub fn micro() -> MapConfig {
    MapConfig {
        prompt_tokens: 2,
        model_dim: 4,
        sampler_heads: 2,
        num_blocks: 1,
        num_attn_heads: 2,
        encoder_dim: 3,
        decomposer_hidden: 4,
        ffn_hidden: 4,
        ..MapConfig::desk()
    }
}

/// Random parameters with non-trivial norms and biases.
pub fn random_map_params(cfg: &MapConfig, seed: u64) -> MapParams<Tensor> {
    let mut r = rng(seed);
    let mut p = MapParams::init(cfg, &mut r);
    miavlm::params::ParamTree::visit_mut(&mut p, "", &mut |name, t| {
        let centre = if name.ends_with("gamma") { 1.0 } else { 0.0 };
        let shifted = ["gamma", "beta", ".b1", ".b2"].iter().any(|s| name.ends_with(s));
        if shifted {
            for v in t.data_mut() {
                *v = centre + r.random_range(-0.5..0.5);
            }
        }
    });
    p.prompts = random_tensor(&mut r, &[cfg.prompt_tokens, cfg.model_dim], 1.0);
    p
}

/// `n!` permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            break;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

pub fn permute<T: Clone>(xs: &[T], order: &[usize]) -> Vec<T> {
    order.iter().map(|&i| xs[i].clone()).collect()
}

pub mod fixture;
pub mod gradient;
