//! Mini-batch training and the gradients used by the attacks.

use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::FocalLoss;
use super::optim::{LrSchedule, RmsProp, RmsPropConfig};
use super::weights::WeightMap;
use super::Model;
use crate::autodiff::{Tape, Tensor};
use crate::data::Samples;
use crate::error::{Error, Result};
use crate::seed::{self, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub rmsprop: RmsPropConfig,
    pub loss: FocalLoss,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            schedule: LrSchedule::default(),
            rmsprop: RmsPropConfig::default(),
            loss: FocalLoss::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Sample-weighted mean batch loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_loss.last().copied()
    }
}

/// Trains for `cfg.epochs` epochs with a fresh optimizer.
pub fn train_local(model: &mut Model, data: &Samples, cfg: &TrainConfig) -> Result<TrainReport> {
    let mut opt = RmsProp::new(cfg.rmsprop, model.weights());
    run_epochs(model, data, cfg, &mut opt, 0..cfg.epochs, cfg.seed)
}

/// Runs the given global epoch indices. The index drives both the learning
/// rate and the shuffle stream, so a run split into pieces matches one run.
pub fn run_epochs(
    model: &mut Model,
    data: &Samples,
    cfg: &TrainConfig,
    opt: &mut RmsProp,
    epochs: Range<usize>,
    seed: u64,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let n = data.len();
    let mut report = TrainReport::default();
    for epoch in epochs {
        let lr = cfg.schedule.at(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::derived_rng(seed, &[stream::SHUFFLE, epoch as u64]));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = data.x.select_rows(batch);
            let y: Vec<u8> = batch.iter().map(|&i| data.y[i]).collect();
            let (loss, grads) = loss_and_grads(model, &x, &y, &cfg.loss)?;
            opt.step(model.weights_mut(), &grads, lr)?;
            total += loss * batch.len() as f64;
            report.steps += 1;
        }
        report.epoch_loss.push(total / n as f64);
    }
    Ok(report)
}

/// Batch loss and its gradient with respect to every weight.
pub fn loss_and_grads(model: &Model, x: &Tensor, y: &[u8], loss: &FocalLoss) -> Result<(f64, WeightMap)> {
    let mut tape = Tape::new();
    let w = model.weights().bind(&mut tape, true);
    let xv = tape.constant(x.clone());
    let p = model.forward(&mut tape, &w, xv)?;
    let l = loss.graph(&mut tape, p, y)?;
    let value = tape.value(l).item().unwrap_or(f64::NAN);
    tape.backward(l)?;
    Ok((value, w.gradients(&tape)?))
}

/// `∇ₓJ` for the batch, same shape as `x`. Weights are read only.
pub fn input_gradient(model: &Model, x: &Tensor, y: &[u8], loss: &FocalLoss) -> Result<Tensor> {
    let mut tape = Tape::new();
    let w = model.weights().bind(&mut tape, false);
    let xv = tape.leaf(x.clone(), true);
    let p = model.forward(&mut tape, &w, xv)?;
    let l = loss.graph(&mut tape, p, y)?;
    tape.backward(l)?;
    tape.grad(xv).ok_or_else(|| Error::Backward("no input gradient".into()))
}

/// Batch loss without recording gradients.
pub fn loss_value(model: &Model, x: &Tensor, y: &[u8], loss: &FocalLoss) -> Result<f64> {
    let p = model.predict_proba(x)?;
    loss.value(&p, y)
}

/// Per-sample loss, used for attack diagnostics.
pub fn per_sample_loss(model: &Model, x: &Tensor, y: &[u8], loss: &FocalLoss) -> Result<Vec<f64>> {
    let p = model.predict_proba(x)?;
    p.iter().zip(y).map(|(&p, &l)| loss.value(&[p], &[l])).collect()
}
