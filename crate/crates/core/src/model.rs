//! The full model: perceiver, Yes/No head and vocabulary, with checkpoint
//! I/O and the order-sensitive concatenation baseline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::bench::{Answer, AntonymLexicon, Question, Templates};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::map::embedding::project_view;
use crate::map::extractor::visual_extract_all_graph;
use crate::map::head::yes_no_head_graph;
use crate::map::{map_forward_raw_graph, MapConfig, MapOutput, MapParams, ModelParams, RawView, NO, YES};
use crate::params::bind_frozen;
use crate::tensor::Tensor;
use crate::vocab::Vocab;

const CHECKPOINT_KIND: &str = "miavlm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Meta {
    kind: String,
    config: MapConfig,
    vocab: Vocab,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: MapConfig,
    pub vocab: Vocab,
    pub params: ModelParams<Tensor>,
}

/// Vocabulary covering every question the templates and lexicon can produce,
/// plus any extra texts.
pub fn benchmark_vocab<'a>(templates: &'a Templates, lexicon: &'a AntonymLexicon, extra: &'a [Question]) -> Vocab {
    Vocab::build(
        templates
            .words()
            .chain(lexicon.terms())
            .chain(extra.iter().map(|q| q.text.as_str())),
    )
}

/// Picks the larger logit; a tie answers Yes.
pub fn decide(logits: [f64; 2]) -> Answer {
    if logits[NO] > logits[YES] {
        Answer::No
    } else {
        Answer::Yes
    }
}

impl Model {
    /// Fresh parameters seeded from `config.init_seed`.
    pub fn init(config: MapConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        if vocab.is_empty() {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        let params = ModelParams::init(&config, vocab.len());
        Ok(Model { config, vocab, params })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let meta = Meta {
            kind: CHECKPOINT_KIND.into(),
            config: self.config.clone(),
            vocab: self.vocab.clone(),
        };
        Checkpoint::from_tree(&self.params, serde_json::to_value(meta).expect("meta serializes"))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: Meta =
            serde_json::from_value(ckpt.meta.clone()).map_err(|e| Error::Data(format!("checkpoint metadata: {e}")))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(Error::Data(format!(
                "checkpoint kind `{}` is not `{CHECKPOINT_KIND}`",
                meta.kind
            )));
        }
        let mut model = Model::init(meta.config, meta.vocab)?;
        ckpt.load_into(&mut model.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        self.vocab.encode(text)
    }

    /// Perceiver output for one scene's raw views.
    pub fn fuse(&self, views: &[RawView]) -> Result<MapOutput> {
        let mut g = Graph::new();
        let p = bind_frozen(&self.params.map, &mut g);
        let out = map_forward_raw_graph(&mut g, &p, views, &self.config)?;
        Ok(out.read(&g))
    }

    /// Order-sensitive stand-in aggregator: per-view extractor outputs get a
    /// slot position encoding and are stacked in input order.
    pub fn fuse_concat(&self, views: &[RawView]) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = bind_frozen(&self.params.map, &mut g);
        let out = concat_fuse_graph(&mut g, &p, views, &self.config)?;
        Ok(g.value(out).clone())
    }

    pub fn logits(&self, fused: &Tensor, tokens: &[usize]) -> Result<[f64; 2]> {
        let mut g = Graph::new();
        let f = g.constant(fused.clone());
        let h = bind_frozen(&self.params.head, &mut g);
        let out = yes_no_head_graph(&mut g, f, tokens, &h)?;
        let v = g.value(out).data();
        Ok([v[YES], v[NO]])
    }
}

/// Sinusoidal encoding of slot `slot`, one row per prompt token.
pub fn slot_encoding(slot: usize, rows: usize, dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * dim);
    for r in 0..rows {
        let pos = (slot * rows + r) as f64;
        for c in 0..dim {
            let freq = 10000f64.powf(-((c / 2 * 2) as f64) / dim as f64);
            data.push(if c % 2 == 0 {
                (pos * freq).sin()
            } else {
                (pos * freq).cos()
            });
        }
    }
    Tensor::matrix(rows, dim, data).expect("encoding shape")
}

pub fn concat_fuse_graph(g: &mut Graph, params: &MapParams<Var>, views: &[RawView], cfg: &MapConfig) -> Result<Var> {
    let projected = views
        .iter()
        .map(|v| project_view(g, v, params.projection))
        .collect::<Result<Vec<_>>>()?;
    let outputs = visual_extract_all_graph(g, params.prompts, &projected, &params.extractor, cfg)?;
    let mut slots = Vec::with_capacity(outputs.len());
    for (i, &o) in outputs.iter().enumerate() {
        let pe = g.constant(slot_encoding(i, cfg.prompt_tokens, cfg.model_dim));
        slots.push(g.add(o, pe)?);
    }
    g.concat(&slots, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_synthetic, SynthConfig};

    fn model() -> Model {
        let vocab = benchmark_vocab(&Templates::default(), &AntonymLexicon::shipped(), &[]);
        Model::init(MapConfig::desk(), vocab).unwrap()
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model();
        let back = Model::from_checkpoint(&Checkpoint::decode(&m.checkpoint().encode()).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn concat_baseline_depends_on_order() {
        let m = model();
        let data = gen_synthetic(1, &SynthConfig::default(), 0).unwrap();
        let mut views = data.scenes[0].views.clone();
        let a = m.fuse_concat(&views).unwrap();
        assert_eq!(a.shape(), [3 * 4, 32]);
        views.swap(0, 2);
        assert!(m.fuse_concat(&views).unwrap().max_abs_diff(&a) > 1e-3);
        let fused = m.fuse(&views).unwrap().fused_prompts;
        views.swap(0, 1);
        assert_eq!(m.fuse(&views).unwrap().fused_prompts, fused);
    }

    #[test]
    fn question_words_are_covered() {
        let m = model();
        assert!(m.encode("Does this person have an oval face?").is_ok());
        assert_eq!(
            m.encode("Does this person have a purple face?").unwrap_err().kind(),
            "token"
        );
    }

    #[test]
    fn ties_answer_yes() {
        assert_eq!(decide([0.0, 0.0]), Answer::Yes);
        assert_eq!(decide([0.0, 0.1]), Answer::No);
    }
}
