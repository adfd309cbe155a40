//! Teacher-forced training with Adam, linear warmup and global-norm clipping.
//!
//! Per-example gradients may be computed in parallel; they are summed in
//! batch order, so a seeded run gives the same loss curve under either
//! execution strategy.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::par::{self, Execution};

use super::checkpoint::Checkpoint;
use super::dataset::TrainingExample;
use super::model::{Model, ModelConfig};
use super::{OverpaintError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Optimizer steps to run.
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm limit; 0 disables clipping.
    pub grad_clip: f64,
    /// Count only targets after SEP.
    pub variation_only_loss: bool,
    /// Stop once a step's training loss falls below this.
    pub target_loss: Option<f64>,
    /// Shuffling and dropout seed.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 8,
            learning_rate: 1e-3,
            warmup_steps: 100,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-9,
            grad_clip: 1.0,
            variation_only_loss: false,
            target_loss: None,
            seed: 0,
        }
    }
}

/// One line of training progress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressRecord {
    /// 1-based optimizer step.
    pub step: usize,
    pub epoch: usize,
    /// Mean per-token loss of the step's batch, before the update.
    pub train_loss: f64,
    /// Mean per-token validation loss, present at the end of each epoch.
    pub val_loss: Option<f64>,
}

/// Where training reports go.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Receives one JSON object per step.
    pub progress: Option<&'a mut dyn Write>,
    /// Called with a checkpoint at the end of every epoch.
    pub on_epoch: Option<&'a mut dyn FnMut(&Checkpoint) -> Result<()>>,
}

/// Adam moments, flat like the parameters.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }
}

fn learning_rate(cfg: &TrainConfig, step: usize) -> f64 {
    if cfg.warmup_steps == 0 {
        cfg.learning_rate
    } else {
        cfg.learning_rate * ((step + 1) as f64 / cfg.warmup_steps as f64).min(1.0)
    }
}

/// Mean per-token loss over `examples`, without dropout.
pub fn mean_loss(model: &Model, examples: &[TrainingExample], variation_only: bool, exec: Execution) -> Result<f64> {
    let parts = par::map(exec, examples, |ex| model.loss(&ex.tokens, &ex.loss_weights(variation_only)));
    let (mut sum, mut count) = (0.0, 0usize);
    for p in parts {
        let (l, n) = p?;
        sum += l;
        count += n;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Trains a freshly initialised model and returns the final checkpoint.
pub fn train(
    train_set: &[TrainingExample],
    val_set: &[TrainingExample],
    model_config: ModelConfig,
    config: &TrainConfig,
    exec: Execution,
    hooks: TrainHooks<'_>,
) -> Result<Checkpoint> {
    let model = Model::new(model_config)?;
    train_model(model, train_set, val_set, config, exec, hooks)
}

/// Continues training `model`.
pub fn train_model(
    mut model: Model,
    train_set: &[TrainingExample],
    val_set: &[TrainingExample],
    config: &TrainConfig,
    exec: Execution,
    mut hooks: TrainHooks<'_>,
) -> Result<Checkpoint> {
    if train_set.is_empty() {
        return Err(OverpaintError::EmptyTrainSet);
    }
    if config.batch_size == 0 {
        return Err(OverpaintError::BadConfig("batch_size must be positive".into()));
    }
    let max_len = model.config().max_len;
    if let Some(ex) = train_set.iter().chain(val_set).find(|ex| ex.len() > max_len) {
        return Err(OverpaintError::TooLong { len: ex.len(), max_len });
    }

    let mut adam = Adam::new(model.n_params());
    let mut history: Vec<ProgressRecord> = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0;
    let mut step = 0;
    while step < config.steps {
        if cursor == 0 {
            order = (0..train_set.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        }
        let batch: Vec<usize> = order[cursor..(cursor + config.batch_size).min(order.len())].to_vec();
        cursor += batch.len();

        let dropout = model.config().dropout > 0.0;
        let current = &model;
        let parts = par::map(exec, &batch, |&i| {
            let ex = &train_set[i];
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(((step as u64) << 32) | i as u64);
            current.loss_and_grad(&ex.tokens, &ex.loss_weights(config.variation_only_loss), dropout.then_some(&mut rng))
        });
        let mut grad = vec![0.0; model.n_params()];
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for part in parts {
            let (l, n, g) = part?;
            loss_sum += l;
            count += n;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let train_loss = if count == 0 { 0.0 } else { loss_sum / count as f64 };
        if !train_loss.is_finite() {
            return Err(OverpaintError::NonFinite(step + 1));
        }
        if count > 0 {
            let inv = 1.0 / count as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(OverpaintError::NonFinite(step + 1));
            }
            if config.grad_clip > 0.0 && norm > config.grad_clip {
                let s = config.grad_clip / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            adam.update(model.params_mut(), &grad, learning_rate(config, step), config);
        }
        step += 1;

        let epoch_done = cursor >= order.len();
        let stop = step >= config.steps || config.target_loss.is_some_and(|t| train_loss < t);
        let val_loss = if (epoch_done || stop) && !val_set.is_empty() {
            Some(mean_loss(&model, val_set, config.variation_only_loss, exec)?)
        } else {
            None
        };
        let record = ProgressRecord { step, epoch, train_loss, val_loss };
        history.push(record);
        if let Some(w) = hooks.progress.as_mut() {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(w, "{line}").map_err(|source| OverpaintError::Io { path: "<progress>".into(), source })?;
        }
        if epoch_done {
            if let Some(f) = hooks.on_epoch.as_mut() {
                f(&Checkpoint::from_model(&model, step, history.clone()))?;
            }
            cursor = 0;
            epoch += 1;
        }
        if stop {
            break;
        }
    }
    Ok(Checkpoint::from_model(&model, step, history))
}
