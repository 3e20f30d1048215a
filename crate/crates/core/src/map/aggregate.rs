//! Weighted sum of per-view extractor outputs.
//!
//! Floating-point addition is not associative, so the addends are first put
//! into a canonical order that depends only on their values (weight
//! descending, ties broken by comparing the output matrices) and then summed
//! pairwise. Any permutation of the inputs yields the same bits.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::tree_sum;
use crate::tensor::Tensor;

/// Allowed deviation of the weight sum from 1.
pub const SIMPLEX_TOLERANCE: f64 = 1e-10;

/// Indices of the addends in summation order.
pub fn canonical_order(weights: &[f64], outputs: &[&Tensor]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        weights[b]
            .total_cmp(&weights[a])
            .then_with(|| outputs[a].lex_cmp(outputs[b]))
    });
    order
}

pub fn check_simplex(weights: &[f64]) -> Result<()> {
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE || !sum.is_finite() {
        return Err(Error::WeightSum { sum });
    }
    Ok(())
}

/// `Σ w_i · o_i` on the tape. `weights` is a length-`n` vector.
pub fn map_aggregate_graph(g: &mut Graph, outputs: &[Var], weights: Var, require_simplex: bool) -> Result<Var> {
    if outputs.is_empty() {
        return Err(Error::EmptyViews { op: "map_aggregate" });
    }
    if g.shape(weights) != [outputs.len()] {
        return Err(Error::Shape {
            op: "map_aggregate",
            lhs: vec![outputs.len()],
            rhs: g.shape(weights).to_vec(),
        });
    }
    let first = g.shape(outputs[0]).to_vec();
    if let Some(&bad) = outputs.iter().find(|&&o| g.shape(o) != first.as_slice()) {
        return Err(Error::Shape {
            op: "map_aggregate",
            lhs: first,
            rhs: g.shape(bad).to_vec(),
        });
    }
    let w = g.value(weights).data().to_vec();
    if require_simplex {
        check_simplex(&w)?;
    }
    let values: Vec<&Tensor> = outputs.iter().map(|&o| g.value(o)).collect();
    let order = canonical_order(&w, &values);
    let mut terms = Vec::with_capacity(order.len());
    for i in order {
        let wi = g.index(weights, i)?;
        terms.push(g.scale_by(outputs[i], wi)?);
    }
    tree_sum(g, &terms)
}

/// Convex combination of per-view outputs; `weights` must sum to 1.
pub fn map_aggregate(outputs: &[Tensor], weights: &[f64]) -> Result<Tensor> {
    if outputs.len() != weights.len() {
        return Err(Error::Shape {
            op: "map_aggregate",
            lhs: vec![outputs.len()],
            rhs: vec![weights.len()],
        });
    }
    let mut g = Graph::new();
    let os: Vec<Var> = outputs.iter().map(|o| g.constant(o.clone())).collect();
    if os.is_empty() {
        return Err(Error::EmptyViews { op: "map_aggregate" });
    }
    let w = g.constant(Tensor::vector(weights.to_vec())?);
    let out = map_aggregate_graph(&mut g, &os, w, true)?;
    Ok(g.value(out).clone())
}
