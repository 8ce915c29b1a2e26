//! Optimization loop, optimizer state and checkpoints.

mod checkpoint;

use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphBatch, GraphError};
use crate::model::{MaskMode, ModelConfig, ModelError, Signet};
use crate::numerics::{Tape, Tensor};
use crate::objective::{training_loss, LossConfig, ObjectiveError};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub model: ModelConfig,
    /// Save a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Rescale gradients whose global norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            learning_rate: 1e-2,
            batch_size: 64,
            seed: 0,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            checkpoint_every: 0,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(TrainError::Config("batch_size must be at least 2".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning_rate must be a non-negative number, got {}",
                self.learning_rate
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(TrainError::Config(format!(
                    "clip_norm must be positive, got {c}"
                )));
            }
        }
        self.model.validate()?;
        self.loss.validate()?;
        if self.loss.beta > 0.0 && !self.model.dual_extractor {
            return Err(TrainError::Config(
                "beta > 0 requires model.dual_extractor".into(),
            ));
        }
        Ok(())
    }
}

/// Adam with bias correction and no weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect()
        };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                p[k] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Model parameters, optimizer moments and progress.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub model: Signet,
    pub optimizer: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
}

impl ModelState {
    pub fn new(model: Signet, seed: u64) -> Self {
        let optimizer = Adam::new(model.params().tensors());
        Self {
            model,
            optimizer,
            epoch: 0,
            seed,
        }
    }
}

/// Fresh parameters for the given feature dimensions.
pub fn init_params(
    cfg: &TrainConfig,
    node_dim: usize,
    dual_dim: usize,
) -> Result<ModelState, TrainError> {
    let model = Signet::new(cfg.model.clone(), node_dim, dual_dim, cfg.seed)?;
    Ok(ModelState::new(model, cfg.seed))
}

/// Training loss of one batch and its gradient for every parameter tensor.
pub fn batch_gradients(
    model: &Signet,
    batch: &GraphBatch,
    loss: &LossConfig,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape, true);
    let out = model.forward_batch(&mut tape, &bound, batch, MaskMode::Learned)?;
    let alignment = model
        .config()
        .dual_extractor
        .then_some((out.p_lift, out.p_star));
    let l = training_loss(&mut tape, out.h, out.h_dual, loss, alignment)?;
    let value = tape.value(l).item().expect("scalar loss");
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    tape.backward(l).map_err(ObjectiveError::from)?;
    let grads = bound
        .vars()
        .iter()
        .zip(model.params().tensors())
        .map(|(&v, t)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
        })
        .collect();
    Ok((value, grads))
}

/// Training loss of one batch without gradients.
pub fn batch_loss(
    model: &Signet,
    batch: &GraphBatch,
    loss: &LossConfig,
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape, false);
    let out = model.forward_batch(&mut tape, &bound, batch, MaskMode::Learned)?;
    let alignment = model
        .config()
        .dual_extractor
        .then_some((out.p_lift, out.p_star));
    let l = training_loss(&mut tape, out.h, out.h_dual, loss, alignment)?;
    Ok(tape.value(l).item().expect("scalar loss"))
}

fn clip(grads: &mut [Tensor], max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads
            .iter_mut()
            .for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= s));
    }
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// One pass over `train` in shuffled batches; returns the mean batch loss.
pub fn train_epoch(
    state: &mut ModelState,
    train: &[Graph],
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    if train.len() < 2 {
        return Err(TrainError::Config(format!(
            "need at least 2 training graphs, got {}",
            train.len()
        )));
    }
    let b = cfg.batch_size.min(train.len());
    let order = epoch_order(state.seed, state.epoch, train.len());
    let mut total = 0.0;
    let mut batches = 0;
    for (bi, chunk) in order.chunks(b).enumerate() {
        if chunk.len() < 2 {
            continue;
        }
        let refs: Vec<&Graph> = chunk.iter().map(|&i| &train[i]).collect();
        let batch = GraphBatch::from_refs(&refs)?;
        let (loss, mut grads) = batch_gradients(&state.model, &batch, &cfg.loss)?;
        let finite_grads = grads.iter().all(Tensor::is_finite);
        if !loss.is_finite() || !finite_grads {
            return Err(TrainError::Divergence {
                epoch: state.epoch,
                batch: bi,
                loss,
            });
        }
        if let Some(c) = cfg.clip_norm {
            clip(&mut grads, c);
        }
        state.optimizer.update(
            state.model.params_mut().tensors_mut(),
            &grads,
            cfg.learning_rate,
        );
        total += loss;
        batches += 1;
    }
    state.epoch += 1;
    Ok(total / batches as f64)
}

/// Dual feature width implied by a graph.
pub fn dual_dim_of(g: &Graph) -> usize {
    g.edge_features
        .as_ref()
        .map_or(g.feature_dim(), Tensor::cols)
}

/// Trains for `cfg.epochs` epochs from fresh parameters. When
/// `checkpoint` is given and `cfg.checkpoint_every > 0`, the state is saved
/// there periodically.
pub fn fit(
    train: &[Graph],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<ModelState, TrainError> {
    let (state, _) = fit_with_history(train, cfg, checkpoint)?;
    Ok(state)
}

/// [`fit`] that also returns the per-epoch losses.
pub fn fit_with_history(
    train: &[Graph],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<(ModelState, Vec<f64>), TrainError> {
    cfg.validate()?;
    let first = train
        .first()
        .ok_or_else(|| TrainError::Config("empty training set".into()))?;
    let mut state = init_params(cfg, first.feature_dim(), dual_dim_of(first))?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let loss = train_epoch(&mut state, train, cfg)?;
        debug!("epoch {} loss {loss:.6}", state.epoch);
        history.push(loss);
        if let Some(path) = checkpoint {
            if cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0 {
                save_checkpoint(&state, path)?;
            }
        }
    }
    info!(
        "trained {} epochs, final loss {:.6}",
        cfg.epochs,
        history.last().copied().unwrap_or(f64::NAN)
    );
    Ok((state, history))
}
