mod common;

use common::*;
use miavlm::map::{
    decompose_cls, map_aggregate, map_forward, project_embedding, sampler_weights, visual_extract, yes_no_head,
    HeadParams, MapConfig, ModelParams, NormPlacement, RawView, SamplerQuery,
};
use miavlm::Tensor;

const TOL: f64 = 1e-10;

#[test]
fn projection_cases() {
    let mut r = rng(1);
    let raw = RawView::new("v", vec![0.5, -1.0, 2.0], random_tensor(&mut r, &[3, 3], 1.0)).unwrap();
    let eye = Tensor::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
    let same = project_embedding(&raw, &eye).unwrap();
    assert_eq!(same.view_id, "v");
    assert_eq!(same.cls, raw.cls);
    assert_eq!(same.patches, raw.patches);

    let zero = project_embedding(&raw, &Tensor::zeros(&[3, 4])).unwrap();
    assert!(zero.cls.iter().all(|&v| v == 0.0));
    assert_eq!(zero.patches, Tensor::zeros(&[3, 4]));

    let w = random_tensor(&mut r, &[3, 4], 1.0);
    let got = project_embedding(&raw, &w).unwrap();
    let wm = mat(&w);
    assert!(max_diff(&vec![got.cls.clone()], &matmul(&vec![raw.cls.clone()], &wm)) < 1e-12);
    assert!(max_diff(&mat(&got.patches), &matmul(&mat(&raw.patches), &wm)) < 1e-12);
    assert_eq!(
        project_embedding(&raw, &Tensor::zeros(&[4, 4])).unwrap_err().kind(),
        "shape"
    );
}

fn one_block() -> MapConfig {
    MapConfig {
        num_blocks: 1,
        ..micro()
    }
}

#[test]
fn extractor_zero_values_leave_normed_prompts() {
    let cfg = one_block();
    let mut p = random_map_params(&cfg, 2);
    let b = &mut p.extractor.blocks[0];
    b.self_attn.w_v = Tensor::zeros(&[4, 4]);
    b.cross_attn.w_v = Tensor::zeros(&[4, 4]);
    b.ffn.w2 = Tensor::zeros(&[4, 4]);
    b.ffn.b2 = Tensor::zeros(&[4]);
    let view = random_view(&mut rng(3), "v", 3, 4);
    let out = visual_extract(&p.prompts, &view, &p.extractor, &cfg).unwrap();
    let want = layer_norm(&mat(&p.prompts), &p.extractor.final_norm, cfg.layer_norm_eps);
    assert!(max_diff(&mat(&out), &want) < 1e-14);
}

#[test]
fn extractor_shape_is_independent_of_patch_count() {
    let cfg = MapConfig::desk();
    let p = random_map_params(&cfg, 4);
    let mut r = rng(5);
    for patches in [1, 5, 100] {
        let view = random_view(&mut r, "v", patches, cfg.model_dim);
        let out = visual_extract(&p.prompts, &view, &p.extractor, &cfg).unwrap();
        assert_eq!(out.shape(), &[cfg.prompt_tokens, cfg.model_dim]);
    }
}

#[test]
fn extractor_matches_unrolled_attention() {
    let mut r = rng(6);
    let variants = [
        one_block(),
        micro(),
        MapConfig {
            norm_placement: NormPlacement::Post,
            ..micro()
        },
        MapConfig {
            kv_include_cls: false,
            ..micro()
        },
        MapConfig {
            num_attn_heads: 1,
            ..micro()
        },
    ];
    for (i, cfg) in variants.iter().enumerate() {
        for trial in 0..10 {
            let p = random_map_params(cfg, 100 * i as u64 + trial);
            let view = random_view(&mut r, "v", 2, cfg.model_dim);
            let got = visual_extract(&p.prompts, &view, &p.extractor, cfg).unwrap();
            let want = extract(&p.prompts, &view, &p.extractor, cfg);
            assert!(max_diff(&mat(&got), &want) < TOL, "variant {i} trial {trial}");
        }
    }
}

#[test]
fn decomposer_cases() {
    let cfg = micro();
    let mut p = random_map_params(&cfg, 7);
    let view = random_view(&mut rng(8), "v", 2, 4);
    let got = decompose_cls(&view, &p.sampler, &cfg).unwrap();
    assert_eq!(got.len(), cfg.sampler_heads);
    assert!(max_diff(&got, &decompose(&view, &p.sampler, &cfg)) < TOL);

    let single = MapConfig {
        sampler_heads: 1,
        ..cfg.clone()
    };
    let p1 = random_map_params(&single, 9);
    let got = decompose_cls(&view, &p1.sampler, &single).unwrap();
    assert!(max_diff(&got, &mlp(&vec![view.cls.clone()], &p1.sampler.decomposer)) < TOL);

    p.sampler.decomposer.w1 = Tensor::zeros(&[4, 4]);
    p.sampler.decomposer.b1 = Tensor::zeros(&[4]);
    p.sampler.decomposer.w2 = Tensor::zeros(&[4, 8]);
    p.sampler.decomposer.b2 = Tensor::zeros(&[8]);
    let zero = decompose_cls(&view, &p.sampler, &cfg).unwrap();
    assert_eq!(zero, vec![vec![0.0; 4]; 2]);
}

#[test]
fn sampler_cases() {
    let cfg = micro();
    let p = random_map_params(&cfg, 10);
    let mut r = rng(11);
    let v = random_view(&mut r, "a", 2, 4);
    assert_eq!(
        sampler_weights(&p.prompts, std::slice::from_ref(&v), &p.sampler, &cfg).unwrap(),
        vec![1.0]
    );
    let w = sampler_weights(&p.prompts, &[v.clone(), v.clone()], &p.sampler, &cfg).unwrap();
    assert!(w.iter().all(|x| (x - 0.5).abs() <= 1e-12));

    for trial in 0..20 {
        let p = random_map_params(&cfg, 200 + trial);
        let views: Vec<_> = (0..3).map(|i| random_view(&mut r, &format!("v{i}"), 2, 4)).collect();
        let got = sampler_weights(&p.prompts, &views, &p.sampler, &cfg).unwrap();
        let want = sampler(&p.prompts, &views, &[], &p.sampler, &cfg);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < TOL);
        }
    }
}

#[test]
fn aggregate_cases() {
    let mut r = rng(12);
    let o = random_mat(&mut r, 2, 2, 1.0);
    assert_eq!(mat(&map_aggregate(&[tensor(&o)], &[1.0]).unwrap()), o);
    let same = map_aggregate(&[tensor(&o), tensor(&o), tensor(&o)], &[0.1, 0.6, 0.3]).unwrap();
    assert!(max_diff(&mat(&same), &o) < 1e-15);

    let o2 = random_mat(&mut r, 2, 2, 1.0);
    let got = mat(&map_aggregate(&[tensor(&o), tensor(&o2)], &[0.25, 0.75]).unwrap());
    for i in 0..2 {
        for j in 0..2 {
            assert!((got[i][j] - (0.25 * o[i][j] + 0.75 * o2[i][j])).abs() < TOL);
        }
    }
    for n in 1..=4 {
        let outs: Vec<Mat> = (0..n).map(|_| random_mat(&mut r, 3, 4, 1.0)).collect();
        let raw: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let ts: Vec<Tensor> = outs.iter().map(tensor).collect();
        let got = mat(&map_aggregate(&ts, &w).unwrap());
        assert!(max_diff(&got, &aggregate(&outs, &w)) < TOL);
    }
}

#[test]
fn forward_single_view_collapse() {
    let cfg = MapConfig::desk();
    let p = random_map_params(&cfg, 13);
    let view = random_view(&mut rng(14), "only", 4, cfg.model_dim);
    let out = map_forward(std::slice::from_ref(&view), &p, &cfg).unwrap();
    assert_eq!(out.per_view_weights, vec![1.0]);
    let lone = visual_extract(&p.prompts, &view, &p.extractor, &cfg).unwrap();
    assert_eq!(out.fused_prompts, lone);
}

#[test]
fn forward_matches_composed_oracle() {
    let mut r = rng(15);
    let configs = [
        MapConfig::desk(),
        micro(),
        MapConfig {
            sampler_query: SamplerQuery::ExtractorOutputs,
            ..micro()
        },
    ];
    for (c, cfg) in configs.iter().enumerate() {
        for n in [2, 3, 9] {
            let p = random_map_params(cfg, 300 + 10 * c as u64 + n as u64);
            let views: Vec<_> = (0..n)
                .map(|i| random_view(&mut r, &format!("v{i}"), 3, cfg.model_dim))
                .collect();
            let got = map_forward(&views, &p, cfg).unwrap();
            let want = common::map_forward(&views, &p, cfg);
            assert!(
                max_diff(&mat(&got.fused_prompts), &want.fused) < TOL,
                "config {c}, n {n}"
            );
            for (a, b) in got.per_view_weights.iter().zip(&want.weights) {
                assert!((a - b).abs() < TOL);
            }
            for (a, b) in got.per_view_outputs.iter().zip(&want.outputs) {
                assert!(max_diff(&mat(a), b) < TOL);
            }
        }
    }
}

#[test]
fn head_cases() {
    let cfg = micro();
    let fused = random_tensor(&mut rng(16), &[cfg.prompt_tokens, cfg.model_dim], 1.0);
    let zero = HeadParams::zeros(&cfg, 5);
    assert_eq!(yes_no_head(&fused, &[0, 3], &zero, &cfg).unwrap(), [0.0, 0.0]);

    for seed in 0..10 {
        let mut c = cfg.clone();
        c.init_seed = seed;
        let mut h = ModelParams::init(&c, 5).head;
        h.b_out = random_tensor(&mut rng(seed), &[2], 1.0);
        let tokens = [1, 4, 4, 0];
        let got = yes_no_head(&fused, &tokens, &h, &cfg).unwrap();
        let want = head(&mat(&fused), &tokens, &h);
        assert!((got[0] - want[0]).abs() < TOL && (got[1] - want[1]).abs() < TOL);

        let other = random_tensor(&mut rng(seed + 50), &[cfg.prompt_tokens, cfg.model_dim], 1.0);
        assert_ne!(yes_no_head(&other, &tokens, &h, &cfg).unwrap(), got);
    }
}
