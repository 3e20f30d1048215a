//! Batch inference and scoring.
//!
//! Questions are grouped by scene; each scene is fused once and all of its
//! questions are answered against that fused sequence. Scenes run in
//! parallel and results are merged in question-id order, so the output does
//! not depend on the number of worker threads.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{score, Answer, EvalReport, Question, Response};
use crate::error::{Error, Result};
use crate::map::RawView;
use crate::model::{decide, Model};
use crate::synth::{Dataset, SyntheticScene};
use crate::tensor::Tensor;

/// How per-view information reaches the head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    /// The perceiver's weighted sum.
    Map,
    /// Slot-encoded per-view outputs stacked in input order.
    Concat,
}

impl Aggregator {
    pub fn label(self) -> &'static str {
        match self {
            Aggregator::Map => "MIAVLM",
            Aggregator::Concat => "concat-baseline",
        }
    }

    fn fuse(self, model: &Model, views: &[RawView]) -> Result<Tensor> {
        match self {
            Aggregator::Map => Ok(model.fuse(views)?.fused_prompts),
            Aggregator::Concat => model.fuse_concat(views),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub logits: [f64; 2],
    pub answer: Answer,
}

impl Prediction {
    pub fn response(&self) -> Response {
        Response {
            id: self.id.clone(),
            response_text: self.answer.as_str().to_string(),
        }
    }
}

/// Answers every question; `arrange` chooses the views (and their order)
/// shown for a scene. Output is sorted by question id.
pub fn predict<F>(
    model: &Model,
    questions: &[Question],
    dataset: &Dataset,
    aggregator: Aggregator,
    arrange: F,
) -> Result<Vec<Prediction>>
where
    F: Fn(&SyntheticScene) -> Vec<RawView> + Sync,
{
    let mut by_scene: BTreeMap<&str, Vec<&Question>> = BTreeMap::new();
    for q in questions {
        by_scene.entry(q.image_id.as_str()).or_default().push(q);
    }
    let groups: Vec<(&SyntheticScene, Vec<&Question>)> = by_scene
        .into_iter()
        .map(|(id, qs)| {
            dataset
                .scene(id)
                .map(|s| (s, qs))
                .ok_or_else(|| Error::Data(format!("question refers to unknown scene {id}")))
        })
        .collect::<Result<_>>()?;
    let per_scene = groups
        .par_iter()
        .map(|(scene, qs)| {
            let fused = aggregator.fuse(model, &arrange(scene))?;
            qs.iter()
                .map(|q| {
                    let logits = model.logits(&fused, &model.encode(&q.text)?)?;
                    Ok(Prediction {
                        id: q.id.clone(),
                        logits,
                        answer: decide(logits),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<Prediction> = per_scene.into_iter().flatten().collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Runs the model on every question and scores the answers.
pub fn evaluate(model: &Model, questions: &[Question], dataset: &Dataset) -> Result<(Vec<Response>, EvalReport)> {
    let preds = predict(model, questions, dataset, Aggregator::Map, |s| s.views.clone())?;
    let responses: Vec<Response> = preds.iter().map(Prediction::response).collect();
    let report = score(questions, &responses)?;
    Ok((responses, report))
}

/// Scores a responder that always gives the same answer.
pub fn constant_responder(questions: &[Question], answer: Answer) -> Result<EvalReport> {
    let responses: Vec<Response> = questions
        .iter()
        .map(|q| Response {
            id: q.id.clone(),
            response_text: answer.as_str().to_string(),
        })
        .collect();
    score(questions, &responses)
}
