//! Run configuration and the training loop.
//!
//! The loss is cross-entropy over the two answer tokens (Yes, No). Every
//! parameter is trained: projection, soft prompts, extractor, sampler and
//! head. Adam runs with a per-epoch cosine learning rate.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::bench::{Answer, Polarity, Question};
use crate::error::{Error, Result};
use crate::map::head::yes_no_head_graph;
use crate::map::{map_forward_raw_graph, MapConfig, RawView, NO, YES};
use crate::model::Model;
use crate::optim::{adam_step, cosine_lr, AdamConfig, AdamState, CosineSchedule};
use crate::params::{bind, bind_frozen, collect_grads, named, ParamTree};
use crate::synth::{Dataset, SynthConfig};
use crate::tensor::{canonical_sum, Tensor};
use crate::vocab::Vocab;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionMix {
    /// Positive and negative instructions.
    Mixed,
    PositivesOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Cosine,
}

/// Everything a run depends on. Echoed into every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub split_ratio: f64,
    pub instruction_mix: InstructionMix,
    /// Scenes generated by `gen-data`.
    pub scenes: usize,
    /// Shuffled orderings in the order experiment, besides the identity.
    pub shuffles: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    pub model: MapConfig,
    pub data: SynthConfig,
    pub adam: AdamConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            epochs: 20,
            lr: 0.001,
            min_lr: 0.0,
            schedule: Schedule::Cosine,
            batch_size: 32,
            split_ratio: crate::bench::TRAIN_RATIO,
            instruction_mix: InstructionMix::Mixed,
            scenes: 100,
            shuffles: 5,
            data_dir: None,
            lexicon: None,
            model: MapConfig::desk(),
            data: SynthConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.data.validate()?;
        if self.model.encoder_dim != self.data.encoder_dim {
            return Err(Error::Config(format!(
                "model.encoder_dim {} differs from data.encoder_dim {}",
                self.model.encoder_dim, self.data.encoder_dim
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        CosineSchedule::new(self.lr, self.epochs.max(1), self.min_lr)?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean batch loss during the epoch. The entry for the last epoch holds
    /// the loss of the trained model over the training set.
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub examples: usize,
    pub epochs: Vec<EpochLog>,
}

/// One question ready for the model.
#[derive(Clone, Debug)]
struct Example {
    tokens: Vec<usize>,
    target: usize,
}

/// Examples grouped by scene, scenes in id order.
struct Groups<'a> {
    scenes: Vec<(&'a [RawView], Vec<Example>)>,
}

fn target(answer: Answer) -> usize {
    match answer {
        Answer::Yes => YES,
        Answer::No => NO,
    }
}

fn group<'a>(questions: &[Question], dataset: &'a Dataset, vocab: &Vocab) -> Result<Groups<'a>> {
    let mut by_scene: BTreeMap<&str, Vec<Example>> = BTreeMap::new();
    for q in questions {
        by_scene.entry(q.image_id.as_str()).or_default().push(Example {
            tokens: vocab.encode(&q.text)?,
            target: target(q.gold),
        });
    }
    let scenes = by_scene
        .into_iter()
        .map(|(id, ex)| {
            let scene = dataset
                .scene(id)
                .ok_or_else(|| Error::Data(format!("question refers to unknown scene {id}")))?;
            Ok((scene.views.as_slice(), ex))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Groups { scenes })
}

/// Summed cross-entropy of `examples` on one scene, built on `g`.
fn scene_loss(
    g: &mut Graph,
    params: &crate::map::ModelParams<Var>,
    views: &[RawView],
    examples: &[&Example],
    cfg: &MapConfig,
) -> Result<Var> {
    let fused = map_forward_raw_graph(g, &params.map, views, cfg)?.fused;
    let logits = examples
        .iter()
        .map(|e| yes_no_head_graph(g, fused, &e.tokens, &params.head))
        .collect::<Result<Vec<_>>>()?;
    let stacked = g.concat(&logits, 0)?;
    let targets: Vec<usize> = examples.iter().map(|e| e.target).collect();
    let mean = g.cross_entropy(stacked, &targets)?;
    Ok(g.scale(mean, examples.len() as f64))
}

/// Mean loss of `model` over the grouped examples, no gradients.
fn full_loss(model: &Model, groups: &Groups) -> Result<f64> {
    let sums = groups
        .scenes
        .par_iter()
        .map(|(views, ex)| {
            let mut g = Graph::new();
            let p = bind_frozen(&model.params, &mut g);
            let refs: Vec<&Example> = ex.iter().collect();
            let l = scene_loss(&mut g, &p, views, &refs, &model.config)?;
            Ok(g.value(l).data()[0])
        })
        .collect::<Result<Vec<f64>>>()?;
    let count: usize = groups.scenes.iter().map(|(_, e)| e.len()).sum();
    Ok(canonical_sum(&sums) / count as f64)
}

pub fn select_instructions(questions: &[Question], mix: InstructionMix) -> Vec<Question> {
    questions
        .iter()
        .filter(|q| mix == InstructionMix::Mixed || q.polarity == Polarity::Positive)
        .cloned()
        .collect()
}

fn step(model: &mut Model, batch: &[(usize, &Example)], groups: &Groups, adam: &mut AdamState) -> Result<f64> {
    let mut g = Graph::new();
    let bound = bind(&model.params, &mut g);
    let mut terms = Vec::new();
    let mut start = 0;
    while start < batch.len() {
        let scene = batch[start].0;
        let end = start + batch[start..].iter().take_while(|(s, _)| *s == scene).count();
        let ex: Vec<&Example> = batch[start..end].iter().map(|(_, e)| *e).collect();
        terms.push(scene_loss(&mut g, &bound, groups.scenes[scene].0, &ex, &model.config)?);
        start = end;
    }
    let total = crate::nn::tree_sum(&mut g, &terms)?;
    let loss = g.scale(total, 1.0 / batch.len() as f64);
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Ok(value);
    }
    g.backward(loss)?;
    let grads = collect_grads(&bound, &g);
    let mut flat: Vec<Tensor> = named(&model.params).into_iter().map(|(_, t)| t.clone()).collect();
    {
        let mut refs: Vec<&mut Tensor> = flat.iter_mut().collect();
        let grad_refs: Vec<&Tensor> = grads.iter().map(|(_, t)| t).collect();
        adam_step(&mut refs, &grad_refs, adam)?;
    }
    let mut it = flat.into_iter();
    model
        .params
        .visit_mut("", &mut |_, t| *t = it.next().expect("same leaf count"));
    Ok(value)
}

/// Trains a fresh model on `questions` (already split) and returns it with
/// the loss and learning-rate trace.
pub fn train(run: &RunConfig, dataset: &Dataset, questions: &[Question], vocab: Vocab) -> Result<(Model, TrainLog)> {
    run.validate()?;
    let selected = select_instructions(questions, run.instruction_mix);
    if selected.is_empty() {
        return Err(Error::Data("no training questions".into()));
    }
    let mut model = Model::init(run.model.clone(), vocab)?;
    let groups = group(&selected, dataset, &model.vocab)?;
    let schedule = CosineSchedule::new(run.lr, run.epochs.max(1), run.min_lr)?;
    let shapes: Vec<Vec<usize>> = named(&model.params).iter().map(|(_, t)| t.shape().to_vec()).collect();
    let mut adam = AdamState::new(shapes.iter().map(Vec::as_slice), run.lr, run.adam);

    let initial_loss = full_loss(&model, &groups)?;
    log::info!("initial loss {initial_loss:.6} over {} examples", selected.len());
    let mut epochs = Vec::with_capacity(run.epochs + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    for epoch in 0..run.epochs {
        adam.lr = cosine_lr(&schedule, epoch)?;
        let mut order: Vec<usize> = (0..groups.scenes.len()).collect();
        order.shuffle(&mut rng);
        let mut stream: Vec<(usize, &Example)> = Vec::new();
        for s in order {
            let mut ex: Vec<&Example> = groups.scenes[s].1.iter().collect();
            ex.shuffle(&mut rng);
            stream.extend(ex.into_iter().map(|e| (s, e)));
        }
        let mut weighted = Vec::new();
        for (b, batch) in stream.chunks(run.batch_size).enumerate() {
            let loss = step(&mut model, batch, &groups, &mut adam).map_err(|e| match e {
                Error::Domain { .. } => Error::NonFiniteLoss { epoch, batch: b },
                e => e,
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            weighted.push(loss * batch.len() as f64);
        }
        let loss = canonical_sum(&weighted) / stream.len() as f64;
        log::info!("epoch {epoch} lr {:.6e} loss {loss:.6}", adam.lr);
        epochs.push(EpochLog {
            epoch,
            lr: adam.lr,
            loss,
        });
    }
    let final_loss = full_loss(&model, &groups)?;
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: run.epochs,
            batch: 0,
        });
    }
    epochs.push(EpochLog {
        epoch: run.epochs,
        lr: cosine_lr(&schedule, run.epochs.min(schedule.total_epochs))?,
        loss: final_loss,
    });
    log::info!("final loss {final_loss:.6}");
    Ok((
        model,
        TrainLog {
            initial_loss,
            final_loss,
            examples: selected.len(),
            epochs,
        },
    ))
}
