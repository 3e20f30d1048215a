//! Input-order experiment: the same nine-view scenes are answered under the
//! identity order and several seeded shuffles, by the perceiver and by the
//! concatenation baseline.
//!
//! Only positive questions are used. The per-ordering metric is accuracy on
//! those questions (the HoOA metric restricted to positives).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{Polarity, Question};
use crate::error::{Error, Result};
use crate::eval::{predict, Aggregator, Prediction};
use crate::model::Model;
use crate::synth::{Dataset, MAX_VIEWS};

pub const REQUIRED_VIEWS: usize = MAX_VIEWS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelOrderResult {
    pub label: String,
    /// Entry 0 is the identity order, entry `s` the `s`-th shuffle.
    pub metrics: Vec<f64>,
    /// Fraction of questions answered as under the identity order.
    pub agreement: Vec<f64>,
    /// Population variance of `metrics`.
    pub variance: f64,
    /// Largest logit change against the identity order.
    pub max_logit_shift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderExperimentReport {
    pub shuffles: usize,
    pub seed: u64,
    pub scenes: usize,
    pub questions: usize,
    pub models: Vec<ModelOrderResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub model: String,
    pub shuffle: usize,
    pub metric: f64,
}

impl OrderExperimentReport {
    /// One row per (model, ordering) for box plots.
    pub fn plot_rows(&self) -> Vec<PlotRow> {
        self.models
            .iter()
            .flat_map(|m| {
                m.metrics.iter().enumerate().map(|(s, &metric)| PlotRow {
                    model: m.label.clone(),
                    shuffle: s,
                    metric,
                })
            })
            .collect()
    }
}

/// Population variance by the shifted-data method; equal inputs give exactly 0.
pub fn population_variance(xs: &[f64]) -> f64 {
    let Some(&shift) = xs.first() else { return 0.0 };
    let n = xs.len() as f64;
    let mean = xs.iter().map(|x| x - shift).sum::<f64>() / n;
    let mean_sq = xs.iter().map(|x| (x - shift) * (x - shift)).sum::<f64>() / n;
    (mean_sq - mean * mean).max(0.0)
}

/// View orders for every scene: the identity, then `shuffles` seeded
/// shuffles. Scene orders are keyed by scene id.
pub fn orderings(scene_ids: &[&str], views: usize, shuffles: usize, seed: u64) -> Vec<BTreeMap<String, Vec<usize>>> {
    let identity: Vec<usize> = (0..views).collect();
    let mut out = vec![scene_ids.iter().map(|id| (id.to_string(), identity.clone())).collect()];
    for s in 1..=shuffles {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        out.push(
            scene_ids
                .iter()
                .map(|id| {
                    let mut p = identity.clone();
                    p.shuffle(&mut rng);
                    (id.to_string(), p)
                })
                .collect(),
        );
    }
    out
}

fn summarize(label: &str, runs: &[Vec<Prediction>], questions: &BTreeMap<&str, &Question>) -> ModelOrderResult {
    let metrics: Vec<f64> = runs
        .iter()
        .map(|preds| {
            let correct = preds
                .iter()
                .filter(|p| p.answer == questions[p.id.as_str()].gold)
                .count();
            correct as f64 / preds.len() as f64
        })
        .collect();
    let agreement = runs
        .iter()
        .map(|preds| {
            let same = preds.iter().zip(&runs[0]).filter(|(a, b)| a.answer == b.answer).count();
            same as f64 / preds.len() as f64
        })
        .collect();
    let max_logit_shift = runs
        .iter()
        .flat_map(|preds| {
            preds
                .iter()
                .zip(&runs[0])
                .flat_map(|(a, b)| a.logits.iter().zip(&b.logits).map(|(x, y)| (x - y).abs()))
        })
        .fold(0.0, f64::max);
    ModelOrderResult {
        label: label.to_string(),
        variance: population_variance(&metrics),
        metrics,
        agreement,
        max_logit_shift,
    }
}

/// Runs both aggregators over the identity order and `shuffles` shuffles.
pub fn order_experiment(
    model: &Model,
    dataset: &Dataset,
    questions: &[Question],
    shuffles: usize,
    seed: u64,
) -> Result<OrderExperimentReport> {
    let positives: Vec<Question> = questions
        .iter()
        .filter(|q| q.polarity == Polarity::Positive)
        .cloned()
        .collect();
    if positives.is_empty() {
        return Err(Error::Data("order experiment needs positive questions".into()));
    }
    let mut scene_ids: Vec<&str> = positives.iter().map(|q| q.image_id.as_str()).collect();
    scene_ids.sort();
    scene_ids.dedup();
    for id in &scene_ids {
        let scene = dataset
            .scene(id)
            .ok_or_else(|| Error::Data(format!("question refers to unknown scene {id}")))?;
        if scene.views.len() != REQUIRED_VIEWS {
            return Err(Error::Data(format!(
                "scene {id} has {} views, the order experiment needs exactly {REQUIRED_VIEWS}",
                scene.views.len()
            )));
        }
    }
    let orders = orderings(&scene_ids, REQUIRED_VIEWS, shuffles, seed);
    let by_id: BTreeMap<&str, &Question> = positives.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut models = Vec::new();
    for aggregator in [Aggregator::Map, Aggregator::Concat] {
        let runs = orders
            .iter()
            .map(|order| {
                predict(model, &positives, dataset, aggregator, |s| {
                    order[s.scene_id()].iter().map(|&i| s.views[i].clone()).collect()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        models.push(summarize(aggregator.label(), &runs, &by_id));
    }
    Ok(OrderExperimentReport {
        shuffles,
        seed,
        scenes: scene_ids.len(),
        questions: positives.len(),
        models,
    })
}
