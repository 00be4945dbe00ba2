use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{backward, forward, GradFault};
use super::{masked_loss, Example, OrmParams};
use crate::math;
use crate::rng::{self, Stream};

pub const CLIP_NORM: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(&'static str),
    #[error("episode {episode}: {len} tokens exceed the positional table of {max}")]
    SequenceTooLong { episode: u64, len: usize, max: usize },
    #[error("training diverged in epoch {epoch}, batch {batch}: {what} is not finite")]
    Diverged { epoch: usize, batch: usize, what: &'static str },
    #[error("no training examples")]
    EmptyDataset,
    #[error("optimizer state has {found} entries, parameters have {expected}")]
    ResumeMismatch { expected: usize, found: usize },
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - math::powi(self.beta1, self.step);
        let c2 = 1.0 - math::powi(self.beta2, self.step);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (math::sqrt(vhat) + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub heldout_iou: Option<f64>,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub params: OrmParams,
    pub adam: Adam,
    pub epochs_done: usize,
    pub log: TrainLog,
}

impl TrainState {
    pub fn new(params: OrmParams) -> Self {
        let adam = Adam::new(params.values.len(), params.config.learning_rate);
        TrainState { params, adam, epochs_done: 0, log: TrainLog::default() }
    }
}

/// Mean loss over `batch` and its gradient. Sequences without any window
/// contribute zero and are skipped.
pub fn batch_gradient(params: &OrmParams, batch: &[&Example], fault: GradFault) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.values.len()];
    if batch.is_empty() {
        return (0.0, grad);
    }
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        if ex.window_len.iter().all(|&n| n == 0) {
            continue;
        }
        let cache = forward(params, &ex.features, ex.len);
        let (l, mut d_out) = masked_loss(&cache.out, ex, &params.config.alphas);
        loss += inv * l;
        d_out.iter_mut().for_each(|g| *g *= inv);
        backward(params, &cache, &d_out, &mut grad, fault);
    }
    (loss, grad)
}

pub fn batch_loss(params: &OrmParams, batch: &[&Example]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let inv = 1.0 / batch.len() as f64;
    batch
        .iter()
        .filter(|ex| ex.window_len.iter().any(|&n| n > 0))
        .map(|ex| inv * masked_loss(&forward(params, &ex.features, ex.len).out, ex, &params.config.alphas).0)
        .sum()
}

fn clip(grad: &mut [f64]) -> f64 {
    let norm = math::sqrt(grad.iter().map(|g| g * g).sum::<f64>());
    if norm > CLIP_NORM {
        let k = CLIP_NORM / norm;
        grad.iter_mut().for_each(|g| *g *= k);
    }
    norm
}

/// Runs the remaining epochs of `state`. Each epoch visits the examples in
/// an order drawn from `(seed, epoch)`, so a resumed run follows the same
/// path as an uninterrupted one. `monitor` is called after every epoch and
/// its value is logged as the held-out IoU.
pub fn train_orm(
    state: TrainState,
    examples: &[Example],
    monitor: &mut dyn FnMut(&OrmParams) -> Option<f64>,
) -> Result<TrainState, ModelError> {
    let epochs = state.params.config.epochs;
    train_orm_until(state, examples, monitor, epochs)
}

/// [`train_orm`] that returns once `stop` epochs are done. The learning
/// rate schedule still spans `config.epochs`, so continuing later matches
/// an uninterrupted run.
pub fn train_orm_until(
    mut state: TrainState,
    examples: &[Example],
    monitor: &mut dyn FnMut(&OrmParams) -> Option<f64>,
    stop: usize,
) -> Result<TrainState, ModelError> {
    let config = state.params.config.clone();
    let stop = stop.min(config.epochs);
    config.validate()?;
    if state.adam.m.len() != state.params.values.len() {
        return Err(ModelError::ResumeMismatch { expected: state.params.values.len(), found: state.adam.m.len() });
    }
    if state.epochs_done >= stop {
        return Ok(state);
    }
    if examples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let batches_per_epoch = examples.len().div_ceil(config.batch_size);
    let total_steps = (config.epochs * batches_per_epoch) as f64;
    for epoch in state.epochs_done..stop {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng::stream(rng::derive_seed(config.seed, epoch as u64), Stream::Shuffle));
        let mut total = 0.0;
        let mut batches = 0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, mut grad) = batch_gradient(&state.params, &batch, GradFault::None);
            if !loss.is_finite() {
                return Err(ModelError::Diverged { epoch, batch: bi, what: "loss" });
            }
            if !clip(&mut grad).is_finite() {
                return Err(ModelError::Diverged { epoch, batch: bi, what: "gradient" });
            }
            if config.cosine_decay {
                let progress = (epoch * batches_per_epoch + bi) as f64 / total_steps;
                state.adam.lr = 0.5 * config.learning_rate * (1.0 + math::cos(core::f64::consts::PI * progress));
            }
            state.adam.update(&mut state.params.values, &grad);
            if !state.params.all_finite() {
                return Err(ModelError::Diverged { epoch, batch: bi, what: "parameter" });
            }
            total += loss * batch.len() as f64;
            batches += 1;
        }
        let heldout_iou = monitor(&state.params);
        state.log.epochs.push(EpochLog { epoch, mean_loss: total / examples.len() as f64, heldout_iou, batches });
        state.epochs_done = epoch + 1;
    }
    Ok(state)
}

/// Largest relative error between backprop and central differences over 200
/// sampled parameters.
pub fn finite_diff_check(params: &OrmParams, examples: &[Example]) -> f64 {
    finite_diff_check_with(params, examples, 200, 0, GradFault::None)
}

pub fn finite_diff_check_with(
    params: &OrmParams,
    examples: &[Example],
    samples: usize,
    seed: u64,
    fault: GradFault,
) -> f64 {
    const H: f64 = 1e-5;
    let batch: Vec<&Example> = examples.iter().collect();
    let (_, analytic) = batch_gradient(params, &batch, fault);
    let mut rng = rng::stream(seed, Stream::GradCheck);
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let i = rng.random_range(0..params.values.len());
        let x = params.values[i];
        probe.values[i] = x + H;
        let up = batch_loss(&probe, &batch);
        probe.values[i] = x - H;
        let down = batch_loss(&probe, &batch);
        probe.values[i] = x;
        let numeric = (up - down) / (2.0 * H);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}
