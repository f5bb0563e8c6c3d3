use serde::{Deserialize, Serialize};

use super::{check_records, diverged, epoch_batches};
use crate::autodiff::{AdamConfig, AdamState, Tape};
use crate::data::{samples_of, split_dataset, AttackTag, BeatRecord};
use crate::error::{Error, Result};
use crate::models::{signal_batch, Discriminator, DiscriminatorConfig, Mode, Network};
use crate::objectives::tape_ary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Stratified share of the training records held out for selection.
    pub validation_fraction: f64,
    pub seed: u64,
    pub discriminator: DiscriminatorConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 15,
            batch_size: 64,
            adam: AdamConfig {
                learning_rate: 1e-3,
                beta1: 0.9,
                ..AdamConfig::default()
            },
            validation_fraction: 0.2,
            seed: 0,
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be >= 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid("validation fraction must be in (0, 1)"));
        }
        self.discriminator.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub model: Discriminator,
    pub best_epoch: usize,
    pub history: Vec<PretrainEpoch>,
}

pub(crate) fn class_accuracy(model: &Discriminator, records: &[BeatRecord]) -> Result<f64> {
    let predicted = model.predict(&samples_of(records))?;
    let hits = predicted.iter().zip(records).filter(|(p, r)| **p == r.label).count();
    Ok(hits as f64 / records.len() as f64)
}

/// One class-loss step over `batch`; returns the batch loss.
pub(crate) fn class_step(
    model: &mut Discriminator,
    adam: &mut AdamState,
    batch: &[&BeatRecord],
) -> Result<f64> {
    let signals: Vec<&[f64]> = batch.iter().map(|r| r.samples.as_slice()).collect();
    let labels: Vec<usize> = batch.iter().map(|r| r.label).collect();
    let mut tape = Tape::new();
    let x = tape.constant(signal_batch(&signals, model.config().width)?);
    let pass = model.forward(&mut tape, x, &labels, Mode::Train, true)?;
    let loss = tape_ary(&mut tape, pass.class_probs, &labels)?;
    let value = tape.value(loss).data()[0];
    tape.backward(loss)?;
    let grads = pass.bound.grads(&tape);
    adam.step(model.params_mut(), &grads)?;
    model.absorb_stats(pass.stat_updates);
    Ok(value)
}

/// Trains the discriminator's class head alone on clean records and keeps
/// the epoch with the best held-out class accuracy (earliest on ties).
pub fn pretrain_undefended(records: &[BeatRecord], cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let d = &cfg.discriminator;
    check_records(records, d.classes, d.width)?;
    if let Some(r) = records.iter().find(|r| r.attack != AttackTag::Clean) {
        return Err(Error::data(format!("pretraining takes clean records only, got {}", r.source_id)));
    }
    let split = split_dataset(records, 1.0 - cfg.validation_fraction, cfg.seed)?;
    let (train, val) = (split.train, split.test);
    let mut model = Discriminator::new(d.clone(), cfg.seed)?;
    let mut adam = AdamState::new(model.params(), cfg.adam);
    let mut best: Option<(f64, usize, Discriminator)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let batches = epoch_batches(train.len(), cfg.batch_size, cfg.seed, epoch);
        for (b, idx) in batches.iter().enumerate() {
            let batch: Vec<&BeatRecord> = idx.iter().map(|&i| &train[i]).collect();
            let loss = class_step(&mut model, &mut adam, &batch).map_err(|e| {
                let ids: Vec<&str> = batch.iter().map(|r| r.source_id.as_str()).collect();
                diverged(epoch, b, &ids, e)
            })?;
            loss_sum += loss * batch.len() as f64;
        }
        let acc = class_accuracy(&model, &val)?;
        history.push(PretrainEpoch {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            validation_accuracy: acc,
        });
        if best.as_ref().is_none_or(|(a, _, _)| acc > *a) {
            best = Some((acc, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(PretrainOutcome {
        model,
        best_epoch,
        history,
    })
}
