//! Shared Adam training loop with per-step random streams.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{substream, StreamRng};
use crate::tensor::{Adam, AdamConfig, ParamStore, Tensor, TensorError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
}

fn default_clip() -> f64 {
    5.0
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: u64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("bad training sample: {0}")]
    Sample(String),
}

/// Optimizer state and loss history; together with the parameters this
/// is everything needed to resume bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub adam: Adam,
    pub epoch: usize,
    pub epoch_losses: Vec<f64>,
}

impl TrainState {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        TrainState {
            adam: Adam::new(AdamConfig::with_lr(lr), params),
            epoch: 0,
            epoch_losses: Vec::new(),
        }
    }
}

/// A model that can produce a loss and gradients from a batch stream.
pub trait Objective {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Mean loss over one batch drawn from `rng`, with parameter gradients.
    fn batch(&self, batch_size: usize, rng: &mut StreamRng) -> Result<(f64, Vec<Tensor>), TrainError>;
}

fn clip(grads: &mut [Tensor], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Train until `schedule.epochs` epochs are complete, resuming from
/// `state.epoch`. The batch for global step `n` is drawn from
/// `substream(seed, stage, n)`. `on_epoch` runs after every epoch.
pub fn run<M: Objective>(
    model: &mut M,
    state: &mut TrainState,
    schedule: &TrainSchedule,
    seed: u64,
    stage: &str,
    mut on_epoch: impl FnMut(&M, &TrainState),
) -> Result<(), TrainError> {
    while state.epoch < schedule.epochs {
        let mut total = 0.0;
        for b in 0..schedule.batches_per_epoch {
            let step = (state.epoch * schedule.batches_per_epoch + b) as u64;
            let mut rng = substream(seed, stage, step);
            let (loss, mut grads) = model.batch(schedule.batch_size, &mut rng)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch: state.epoch,
                    step,
                });
            }
            clip(&mut grads, schedule.grad_clip);
            state.adam.step(model.params_mut(), &grads)?;
            total += loss;
        }
        state.epoch += 1;
        state
            .epoch_losses
            .push(total / schedule.batches_per_epoch.max(1) as f64);
        on_epoch(model, state);
    }
    Ok(())
}
