//! SGD with momentum and coupled weight decay, plus the step LR schedule.

use serde::{Deserialize, Serialize};

use super::{NnError, Scalar};

/// Training hyperparameters. Defaults follow the published configuration;
/// end-to-end desk runs override epochs/batch/lr.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub lr_drop_every: usize,
    pub lr_drop_factor: f64,
    pub batch_size: usize,
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            epochs: 300,
            lr_drop_every: 100,
            lr_drop_factor: 10.0,
            batch_size: 512,
            label_smoothing: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let ok = self.lr0 > 0.0
            && self.momentum >= 0.0
            && self.weight_decay >= 0.0
            && self.lr_drop_every > 0
            && self.lr_drop_factor > 0.0
            && self.batch_size > 0
            && (0.0..=1.0).contains(&self.label_smoothing);
        if ok {
            Ok(())
        } else {
            Err(NnError::BadDescriptor { detail: format!("invalid train config: {self:?}") })
        }
    }
}

/// Learning rate at `epoch`: lr0 × drop_factor^(−⌊epoch/drop_every⌋).
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 / cfg.lr_drop_factor.powi((epoch / cfg.lr_drop_every) as i32)
}

/// One SGD update over a flat parameter slice:
/// g' = g + λ·w;  buf = μ·buf + g';  w = w − lr·buf.
pub fn sgd_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    buf: &mut [T],
    lr: T,
    momentum: T,
    weight_decay: T,
) -> Result<(), NnError> {
    if params.len() != grads.len() || params.len() != buf.len() {
        return Err(NnError::ShapeMismatch {
            op: "sgd_step",
            detail: format!("params {}, grads {}, buf {}", params.len(), grads.len(), buf.len()),
        });
    }
    for ((w, &g), b) in params.iter_mut().zip(grads).zip(buf.iter_mut()) {
        let g = weight_decay.mul_add(*w, g);
        let m = momentum.mul_add(*b, g);
        *b = m;
        *w = *w - lr * m;
    }
    Ok(())
}
