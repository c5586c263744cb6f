use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, clip_grad_norm, AdamState};
use super::loss::{total_loss, LossBreakdown};
use crate::config::{ModelConfig, RunConfig};
use crate::data::{batch, Dataset, DatasetHeader};
use crate::diffcore::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::eval::{mae, predict_dataset};
use crate::model::TmsonModel;
use crate::nn::Mode;
use crate::rng::{derive_seed, stream};

/// Batch size used for validation passes.
pub const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch-averaged loss components; `triplets` is the epoch total.
    pub train: LossBreakdown,
    pub val_mae: f64,
    /// Optimiser steps whose gradient norm was clipped.
    pub clipped_steps: usize,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation MAE.
    pub model: TmsonModel,
    pub history: History,
}

/// The configured model with input widths taken from the dataset header.
pub fn model_config_for(cfg: &ModelConfig, header: &DatasetHeader) -> ModelConfig {
    ModelConfig {
        d_t: header.d_t,
        d_v: header.d_v,
        d_a: header.d_a,
        ..cfg.clone()
    }
}

/// Seed used to initialise the model of a run.
pub fn init_seed(seed: u64) -> u64 {
    derive_seed(seed, 1)
}

/// Trains with seeded shuffling, sampling and dropout, keeping the parameters
/// with the best validation MAE and stopping after `patience` epochs without
/// improvement.
pub fn train(train_set: &Dataset, val_set: &Dataset, cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val_set.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    if train_set.header.dims() != val_set.header.dims() {
        return Err(Error::Config(format!(
            "train dims {:?} differ from validation dims {:?}",
            train_set.header.dims(),
            val_set.header.dims()
        )));
    }
    let tc = &cfg.train;
    let seed = tc.seed;
    let mut model = TmsonModel::new(&model_config_for(&cfg.model, &train_set.header), init_seed(seed))?;
    let mut adam = AdamState::new(&model.store);
    let mut noise_rng = stream(seed, 2);
    let mut mining_rng = stream(seed, 3);
    let val_labels = val_set.labels();

    let mut best_store = model.store.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=tc.max_epochs {
        let batches = batch(train_set, tc.batch_size, Some(derive_seed(seed, 100 + epoch as u64)))?;
        let mut sum = LossBreakdown::default();
        let mut clipped = 0;
        for b in &batches {
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape, true);
            let out = model.forward(&mut tape, &bound, b, &mut Mode::Train(&mut noise_rng))?;
            let (loss, bd) = total_loss(&mut tape, &bound, &model, &out, &b.y, &cfg.loss, &mut mining_rng)?;
            let grads = tape.backward(loss)?;
            let mut g: Vec<Tensor> = bound.iter().map(|&v| grads.get(v)).collect();
            if let Some(limit) = tc.clip_norm {
                if let Some(norm) = clip_grad_norm(&mut g, limit) {
                    clipped += 1;
                    debug!("epoch {epoch}: gradient norm {norm:.3} clipped to {limit}");
                }
            }
            adam_step(&mut model.store, &g, &mut adam, &cfg.optimizer)?;
            sum.accumulate(&bd);
        }
        let mut mean = sum.scaled(1.0 / batches.len() as f64);
        mean.triplets = sum.triplets;

        let preds: Vec<f64> = predict_dataset(&model, val_set, EVAL_BATCH)?.iter().map(|p| p.y_hat).collect();
        let val_mae = mae(&preds, &val_labels)?;
        let improved = val_mae < best_val;
        if improved {
            best_val = val_mae;
            best_epoch = epoch;
            best_store = model.store.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        info!(
            "epoch {epoch}: train loss {:.4} (fused {:.4}), val MAE {val_mae:.4}{}",
            mean.total,
            mean.fused,
            if improved { " *" } else { "" }
        );
        epochs.push(EpochRecord { epoch, train: mean, val_mae, clipped_steps: clipped, improved });
        if since_best >= tc.patience {
            stopped_early = true;
            break;
        }
    }
    model.store = best_store;
    Ok(TrainOutcome {
        model,
        history: History { epochs, best_epoch, best_val_mae: best_val, stopped_early },
    })
}
