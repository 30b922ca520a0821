//! Mini-batch training with Adam.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::adam::Adam;
use crate::nn::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    /// Baseline training: 10 epochs at learning rate 0.001.
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 0.001,
            batch_size: 64,
            seed: 0,
            optimizer: Optimizer::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::validation("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::validation("batch size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean of the per-batch losses, each measured before its update.
    pub mean_loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub epochs: Vec<EpochStats>,
}

/// Sample order for one epoch: a permutation seeded with `seed + epoch`.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64));
    order.shuffle(&mut rng);
    order
}

/// Running totals for per-epoch statistics.
#[derive(Default)]
pub(crate) struct EpochAccumulator {
    loss_sum: f64,
    correct: usize,
    seen: usize,
}

impl EpochAccumulator {
    pub(crate) fn add(&mut self, loss: &crate::nn::loss::LossValue) {
        self.loss_sum += loss.mean_loss * loss.total_count as f64;
        self.correct += loss.correct_count;
        self.seen += loss.total_count;
    }

    pub(crate) fn finish(&self, epoch: usize) -> EpochStats {
        EpochStats {
            epoch,
            mean_loss: self.loss_sum / self.seen as f64,
            accuracy: self.correct as f64 / self.seen as f64,
        }
    }
}

/// Trains a copy of `model` on `data`; the input model is untouched.
///
/// Deterministic: equal inputs and seeds give bit-identical parameters.
pub fn train(model: &Model, data: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::validation("cannot train on an empty dataset"));
    }
    let mut model = model.clone();
    let mut opt = Adam::new(&model, cfg.learning_rate);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(data.len(), cfg.seed, epoch);
        let mut acc = EpochAccumulator::default();
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = data.batch(chunk)?;
            let loss = model.compute_param_grads(&x, &y)?;
            opt.step(&mut model)?;
            acc.add(&loss);
        }
        let stats = acc.finish(epoch);
        info!(
            "train epoch {}/{}: loss {:.4}, accuracy {:.2}%",
            epoch + 1,
            cfg.epochs,
            stats.mean_loss,
            100.0 * stats.accuracy
        );
        epochs.push(stats);
    }
    model.zero_grad();
    Ok(TrainOutcome { model, epochs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic;
    use crate::nn::model::Architecture;

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn defaults_are_baseline_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.epochs, 10);
        assert_eq!(cfg.learning_rate, 0.001);
        assert_eq!(cfg.batch_size, 64);
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(50, 3, 1);
        assert_eq!(a, epoch_order(50, 3, 1));
        assert_eq!(a, epoch_order(50, 2, 2));
        assert_ne!(a, epoch_order(50, 3, 2));
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_and_loss_decreases() {
        let data = make_synthetic(20, 2, 5).unwrap();
        let model = Model::new(Architecture::Mlp { hidden: 8 }, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let a = train(&model, &data, &cfg).unwrap();
        let b = train(&model, &data, &cfg).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert!(a.epochs.last().unwrap().mean_loss <= a.epochs[0].mean_loss);
        assert_ne!(a.model.params(), model.params());
    }
}
