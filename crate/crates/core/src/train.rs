//! Mini-batch Adam training with early stopping on validation MSE.

use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::data::Windows;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::grad::{adam_step, AdamConfig, AdamState, ParamStore};
use crate::model::Model;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 32,
            max_epochs: 30,
            patience: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }

    fn shuffle_seed(&self, epoch: usize) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation MSE.
    pub model: Model,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub epoch_times: Vec<f64>,
    pub best_epoch: Option<usize>,
}

impl TrainOutcome {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }
}

/// One pass over `train` in shuffled batches; returns the window-weighted mean loss.
pub fn train_epoch(
    model: &mut Model,
    state: &mut AdamState,
    train: &Windows<'_>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut seen = 0usize;
    for batch in train.batches(cfg.batch_size, Some(cfg.shuffle_seed(epoch))) {
        let (loss, grads) = model.loss_and_grads(&batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        adam_step(model.params_mut(), &grads, state)?;
        total += loss * batch.len() as f64;
        seen += batch.len();
    }
    Ok(total / seen.max(1) as f64)
}

pub fn train(mut model: Model, train: &Windows<'_>, val: &Windows<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut state = AdamState::new(cfg.adam, model.params());
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut outcome = TrainOutcome {
        model: model.clone(),
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        epoch_times: Vec::new(),
        best_epoch: None,
    };
    for epoch in 0..cfg.max_epochs {
        let start = Instant::now();
        let loss = train_epoch(&mut model, &mut state, train, cfg, epoch)?;
        outcome.epoch_times.push(start.elapsed().as_secs_f64());
        let (val_metrics, _) = evaluate(&model, val, cfg.batch_size.max(256))?;
        outcome.train_loss.push(loss);
        outcome.val_loss.push(val_metrics.mse);
        debug!("epoch {epoch}: train {loss:.6} val {:.6}", val_metrics.mse);
        let improved = best.as_ref().is_none_or(|(b, _, _)| val_metrics.mse < *b);
        if improved {
            best = Some((val_metrics.mse, epoch, model.params().clone()));
        } else if epoch - best.as_ref().map_or(0, |b| b.1) >= cfg.patience {
            info!("early stop after epoch {epoch}");
            break;
        }
    }
    if let Some((_, epoch, params)) = best {
        outcome.best_epoch = Some(epoch);
        outcome.model = Model::from_params(model.config().clone(), params)?;
    }
    Ok(outcome)
}
