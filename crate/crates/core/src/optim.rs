//! Adam with bias correction and a per-epoch cosine annealing schedule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zeroed moments for parameters of the given shapes.
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>, lr: f64, config: AdamConfig) -> Self {
        let first_moment: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros).collect();
        AdamState {
            step_count: 0,
            second_moment: first_moment.clone(),
            first_moment,
            lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
        }
    }
}

/// One Adam update over `params`, paired positionally with `grads`.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Contract(format!(
            "adam_step: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);

    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *w -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Cosine annealing from `base_lr` at epoch 0 to `min_lr` at `total_epochs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub total_epochs: usize,
    pub min_lr: f64,
}

impl CosineSchedule {
    pub fn new(base_lr: f64, total_epochs: usize, min_lr: f64) -> Result<Self> {
        if !(base_lr > 0.0) || total_epochs == 0 || !(min_lr >= 0.0) || min_lr > base_lr {
            return Err(Error::Config(format!(
                "cosine schedule needs base_lr > 0, total_epochs > 0 and 0 <= min_lr <= base_lr \
                 (got {base_lr}, {total_epochs}, {min_lr})"
            )));
        }
        Ok(CosineSchedule {
            base_lr,
            total_epochs,
            min_lr,
        })
    }
}

pub fn cosine_lr(schedule: &CosineSchedule, epoch: usize) -> Result<f64> {
    if epoch > schedule.total_epochs {
        return Err(Error::Domain {
            op: "cosine_lr",
            detail: format!("epoch {epoch} beyond {} total epochs", schedule.total_epochs),
        });
    }
    if epoch == schedule.total_epochs {
        return Ok(schedule.min_lr);
    }
    let progress = epoch as f64 / schedule.total_epochs as f64;
    Ok(schedule.min_lr + 0.5 * (schedule.base_lr - schedule.min_lr) * (1.0 + (PI * progress).cos()))
}
