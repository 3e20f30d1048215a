//! Random micro-scale model instances and their finite-difference check.

use miavlm::gradcheck::{finite_difference, worst_relative_error, DEFAULT_STEP};
use miavlm::map::head::yes_no_head_graph;
use miavlm::map::{map_forward_raw_graph, ModelParams, RawView};
use miavlm::params::{bind, bind_frozen, collect_grads};
use miavlm::{Graph, Result, Tensor, Var};
use rand::Rng;

use super::{micro, random_map_params, random_tensor, rng};

pub struct Instance {
    pub params: ModelParams<Tensor>,
    pub views: Vec<RawView>,
    pub questions: Vec<(Vec<usize>, usize)>,
}

pub fn instance(seed: u64) -> Instance {
    let mut cfg = micro();
    cfg.init_seed = seed;
    let vocab = 6;
    let mut params = ModelParams::init(&cfg, vocab);
    params.map = random_map_params(&cfg, seed + 1000);
    params.head.b_out = random_tensor(&mut rng(seed + 2000), &[2], 1.0);
    let mut g = rng(seed);
    let n = g.random_range(1..=4);
    let views = (0..n)
        .map(|i| {
            let p = g.random_range(1..=3);
            let cls = (0..cfg.encoder_dim).map(|_| g.random_range(-1.0..1.0)).collect();
            RawView::new(format!("v{i}"), cls, random_tensor(&mut g, &[p, cfg.encoder_dim], 1.0)).unwrap()
        })
        .collect();
    let questions = (0..3)
        .map(|_| {
            let len = g.random_range(1..=4);
            let tokens = (0..len).map(|_| g.random_range(0..vocab)).collect();
            (tokens, g.random_range(0..2))
        })
        .collect();
    Instance {
        params,
        views,
        questions,
    }
}

pub fn model_loss(g: &mut Graph, p: &ModelParams<Var>, inst: &Instance) -> Result<Var> {
    let cfg = micro();
    let fused = map_forward_raw_graph(g, &p.map, &inst.views, &cfg)?.fused;
    let logits = inst
        .questions
        .iter()
        .map(|(t, _)| yes_no_head_graph(g, fused, t, &p.head))
        .collect::<Result<Vec<_>>>()?;
    let stacked = g.concat(&logits, 0)?;
    let targets: Vec<usize> = inst.questions.iter().map(|q| q.1).collect();
    g.cross_entropy(stacked, &targets)
}

/// Worst relative error between tape and finite-difference gradients.
pub fn full_model_error(seed: u64) -> (f64, String) {
    let inst = instance(seed);
    let mut g = Graph::new();
    let bound = bind(&inst.params, &mut g);
    let loss = model_loss(&mut g, &bound, &inst).unwrap();
    g.backward(loss).unwrap();
    let analytic = collect_grads(&bound, &g);
    let numeric = finite_difference(&inst.params, DEFAULT_STEP, |p: &ModelParams<Tensor>| {
        let mut g = Graph::new();
        let b = bind_frozen(p, &mut g);
        let l = model_loss(&mut g, &b, &inst)?;
        Ok(g.value(l).data()[0])
    })
    .unwrap();
    worst_relative_error(&analytic, &numeric)
}
