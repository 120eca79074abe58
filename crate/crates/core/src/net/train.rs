//! Mini-batch SGD over a fixed set of training pairs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::model::{backward_loss, forward_loss, Model, TrainPair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate multiplier applied after every epoch.
    pub decay: f64,
    /// Drives the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            lr: 0.3,
            decay: 0.99,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {} is invalid", self.lr)));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(Error::InvalidConfig(format!("decay {} is invalid", self.decay)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean training loss of each epoch, measured during the epoch.
    pub loss_trace: Vec<f64>,
}

/// Mean loss and mean flat gradient over `batch`.
///
/// Examples are processed in parallel and summed in batch order, so the
/// result does not depend on thread scheduling.
pub fn batch_gradient(batch: &[&TrainPair], model: &Model) -> Result<(f64, Vec<f64>)> {
    let per_example: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|pair| {
            let (loss, cache) = forward_loss(pair, model)?;
            Ok((loss, backward_loss(&cache, model, 1.0)?.to_vec()))
        })
        .collect::<Result<_>>()?;
    let inv = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; model.num_params()];
    let mut loss = 0.0;
    for (l, g) in &per_example {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((loss * inv, grad))
}

/// Trains a copy of `model` on `dataset`.
pub fn sgd_train(dataset: &[TrainPair], model: &Model, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    cfg.validate()?;
    model.validate()?;
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut lr = cfg.lr;
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainPair> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (loss, grad) = batch_gradient(&batch, &model)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::DivergedLoss { epoch, loss });
            }
            total += loss * chunk.len() as f64;
            if lr > 0.0 {
                let mut params = model.params_vec();
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= lr * g;
                }
                model.set_params_vec(&params)?;
            }
        }
        loss_trace.push(total / dataset.len() as f64);
        lr *= cfg.decay;
    }
    Ok(TrainOutcome { model, loss_trace })
}
