//! PGD inner maximization with L∞ projection, and adversarial fine-tuning.

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{sign, within_budget};
use crate::data::{LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::nn::train::{epoch_order, EpochAccumulator};
use crate::nn::{Adam, EpochStats, Model};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseConfig {
    /// Radius ϵ of the L∞ ball the inner maximization searches.
    pub epsilon_budget: f64,
    pub step_size_alpha: f64,
    pub pgd_steps_k: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Start each PGD run from a uniform point inside the ball.
    pub random_start: bool,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for DefenseConfig {
    /// Adversarial retraining: 20 epochs at learning rate 1e-4, k = 20,
    /// α = 0.01, budget 0.25.
    fn default() -> Self {
        DefenseConfig {
            epsilon_budget: 0.25,
            step_size_alpha: 0.01,
            pgd_steps_k: 20,
            epochs: 20,
            learning_rate: 1e-4,
            random_start: true,
            seed: 0,
            batch_size: 64,
        }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_budget > 0.0 && self.epsilon_budget <= 1.0) {
            return Err(Error::validation(format!(
                "defense budget must be in (0, 1], got {}",
                self.epsilon_budget
            )));
        }
        if !(self.step_size_alpha > 0.0 && self.step_size_alpha.is_finite()) {
            return Err(Error::validation(format!(
                "PGD step size must be positive, got {}",
                self.step_size_alpha
            )));
        }
        if self.pgd_steps_k < 1 {
            return Err(Error::validation("PGD needs at least one step"));
        }
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

#[inline]
fn project_value(origin: f64, point: f64, eps: f64) -> f64 {
    within_budget(origin, point.clamp(origin - eps, origin + eps), eps).clamp(0.0, 1.0)
}

/// Clamps `point` into `[origin − ϵ, origin + ϵ]`, then into `[0, 1]`.
///
/// The ball clamp is tightened by an ulp where rounding of `origin ± ϵ`
/// would leave the computed distance above ϵ.
pub fn project_linf(origin: &Tensor, point: &Tensor, epsilon_budget: f64) -> Result<Tensor> {
    if origin.shape() != point.shape() {
        return Err(Error::validation(format!(
            "projection shapes differ: {:?} vs {:?}",
            origin.shape(),
            point.shape()
        )));
    }
    let values = origin
        .values()
        .iter()
        .zip(point.values())
        .map(|(&o, &p)| project_value(o, p, epsilon_budget))
        .collect();
    Tensor::new(origin.shape().to_vec(), values)
}

fn check_unit_range(batch: &Tensor) -> Result<()> {
    match batch.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(bad) => Err(Error::validation(format!("input value {bad} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// `k` signed ascent steps of size α, each followed by projection onto the
/// ϵ-ball around `batch`. Random starts draw sample `i` from stream `i` of
/// a ChaCha generator seeded with `cfg.seed`.
pub fn pgd_perturb(model: &Model, batch: &Tensor, labels: &[u8], cfg: &DefenseConfig) -> Result<Tensor> {
    pgd_perturb_observed(model, batch, labels, cfg, cfg.seed, |_, _| {})
}

/// [`pgd_perturb`] with an explicit random-start seed, calling
/// `observe(t, &x_t)` on every iterate from `x⁰` to `xᵏ`.
pub fn pgd_perturb_observed(
    model: &Model,
    batch: &Tensor,
    labels: &[u8],
    cfg: &DefenseConfig,
    seed: u64,
    mut observe: impl FnMut(usize, &Tensor),
) -> Result<Tensor> {
    cfg.validate()?;
    check_unit_range(batch)?;
    let eps = cfg.epsilon_budget;
    let mut x = batch.clone();
    if cfg.random_start {
        let width = batch.row_len();
        for (i, row) in x.values_mut().chunks_exact_mut(width).enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            for (v, &o) in row.iter_mut().zip(batch.row(i)) {
                *v = project_value(o, o + rng.random_range(-eps..=eps), eps);
            }
        }
    }
    observe(0, &x);
    for t in 1..=cfg.pgd_steps_k {
        let (_, grad) = model.loss_and_input_grad(&x, labels)?;
        for ((v, &g), &o) in x.values_mut().iter_mut().zip(grad.values()).zip(batch.values()) {
            *v = project_value(o, *v + cfg.step_size_alpha * sign(g), eps);
        }
        observe(t, &x);
    }
    Ok(x)
}

/// Random-start seed for one training batch.
fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    // SplitMix64 finalizer over the packed coordinates
    let mut z = seed ^ ((epoch as u64) << 32) ^ (batch as u64);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct DefenseOutcome {
    pub model: Model,
    /// Loss and accuracy on the adversarial batches, measured before each update.
    pub log: Vec<EpochStats>,
}

/// Fine-tunes a copy of `base` on PGD examples.
///
/// Every batch is attacked against the current parameters, then one Adam
/// step is taken on the adversarial batch alone. Adam starts from fresh
/// moments.
pub fn adversarial_train(base: &Model, clean: &LabeledDataset, cfg: &DefenseConfig) -> Result<DefenseOutcome> {
    cfg.validate()?;
    if clean.provenance() != Provenance::Clean {
        return Err(Error::validation(format!(
            "adversarial training needs a clean dataset, {} is adversarial",
            clean.reference()
        )));
    }
    if clean.is_empty() {
        return Err(Error::validation("cannot train on an empty dataset"));
    }
    let mut model = base.clone();
    let mut opt = Adam::new(&model, cfg.learning_rate);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(clean.len(), cfg.seed, epoch);
        let mut acc = EpochAccumulator::default();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = clean.batch(chunk)?;
            let adv = pgd_perturb_observed(&model, &x, &y, cfg, batch_seed(cfg.seed, epoch, b), |_, _| {})?;
            let loss = model.compute_param_grads(&adv, &y)?;
            opt.step(&mut model)?;
            acc.add(&loss);
        }
        let stats = acc.finish(epoch);
        info!(
            "defense epoch {}/{} (budget {}): adversarial loss {:.4}, accuracy {:.2}%",
            epoch + 1,
            cfg.epochs,
            cfg.epsilon_budget,
            stats.mean_loss,
            100.0 * stats.accuracy
        );
        log.push(stats);
    }
    model.zero_grad();
    Ok(DefenseOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{fgsm_perturb, AttackConfig};
    use crate::data::make_synthetic;
    use crate::nn::Architecture;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_linf(&t(&[0.5]), &t(&[0.9]), 0.1).unwrap().values(), &[0.6]);
        assert_eq!(project_linf(&t(&[0.98]), &t(&[1.2]), 0.1).unwrap().values(), &[1.0]);
        let inside = t(&[0.3, 0.55]);
        assert_eq!(project_linf(&t(&[0.3, 0.5]), &inside, 0.1).unwrap(), inside);
        assert!(project_linf(&t(&[0.3]), &t(&[0.3, 0.5]), 0.1).is_err());
    }

    #[test]
    fn config_contract() {
        DefenseConfig::default().validate().unwrap();
        let d = DefenseConfig::default();
        assert_eq!((d.epochs, d.pgd_steps_k, d.step_size_alpha, d.learning_rate), (20, 20, 0.01, 1e-4));
        assert!(d.random_start);
        for bad in [
            DefenseConfig { epsilon_budget: 0.0, ..d.clone() },
            DefenseConfig { step_size_alpha: 0.0, ..d.clone() },
            DefenseConfig { pgd_steps_k: 0, ..d.clone() },
            DefenseConfig { epochs: 0, ..d.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
        // α larger than ϵ is allowed; projection absorbs the overshoot
        DefenseConfig { step_size_alpha: 0.5, epsilon_budget: 0.1, ..d }.validate().unwrap();
    }

    #[test]
    fn single_saturating_step_is_fgsm() {
        let data = make_synthetic(2, 10, 4).unwrap();
        let model = Model::new(Architecture::Mlp { hidden: 16 }, 3).unwrap();
        for eps in [0.1, 0.25] {
            let cfg = DefenseConfig {
                epsilon_budget: eps,
                step_size_alpha: eps,
                pgd_steps_k: 1,
                random_start: false,
                ..DefenseConfig::default()
            };
            let pgd = pgd_perturb(&model, data.images(), data.labels(), &cfg).unwrap();
            let fgsm = fgsm_perturb(&model, data.images(), data.labels(), &AttackConfig::new(eps)).unwrap();
            assert_eq!(pgd, fgsm);
        }
    }

    #[test]
    fn zero_gradient_leaves_input() {
        let data = make_synthetic(1, 10, 0).unwrap();
        let model = Model::zeros(Architecture::Mlp { hidden: 4 }).unwrap();
        let cfg = DefenseConfig {
            random_start: false,
            ..DefenseConfig::default()
        };
        let out = pgd_perturb(&model, data.images(), data.labels(), &cfg).unwrap();
        assert_eq!(&out, data.images());
    }

    #[test]
    fn every_iterate_is_contained() {
        let data = make_synthetic(2, 5, 1).unwrap();
        let model = Model::new(Architecture::Mlp { hidden: 8 }, 1).unwrap();
        let cfg = DefenseConfig {
            epsilon_budget: 0.05,
            step_size_alpha: 0.02,
            pgd_steps_k: 6,
            ..DefenseConfig::default()
        };
        let mut seen = Vec::new();
        pgd_perturb_observed(&model, data.images(), data.labels(), &cfg, 9, |step, x| {
            seen.push(step);
            assert!(x.max_abs_diff(data.images()).unwrap() <= cfg.epsilon_budget);
            assert!(x.values().iter().all(|v| (0.0..=1.0).contains(v)));
        })
        .unwrap();
        assert_eq!(seen, (0..=6).collect::<Vec<_>>());
    }

    #[test]
    fn random_start_is_seeded_and_per_sample() {
        let data = make_synthetic(2, 3, 1).unwrap();
        let model = Model::new(Architecture::Mlp { hidden: 8 }, 1).unwrap();
        let cfg = DefenseConfig {
            pgd_steps_k: 2,
            ..DefenseConfig::default()
        };
        let a = pgd_perturb(&model, data.images(), data.labels(), &cfg).unwrap();
        let b = pgd_perturb(&model, data.images(), data.labels(), &cfg).unwrap();
        assert_eq!(a, b);
        let other = pgd_perturb(&model, data.images(), data.labels(), &DefenseConfig { seed: 1, ..cfg.clone() }).unwrap();
        assert_ne!(a, other);
        // a prefix of the batch sees the same noise streams
        let (x, y) = data.batch(&[0, 1]).unwrap();
        let head = pgd_perturb(&model, &x, &y, &cfg).unwrap();
        assert_eq!(head.values(), &a.values()[..2 * 784]);
    }

    #[test]
    fn one_epoch_moves_parameters() {
        let data = make_synthetic(32, 2, 0).unwrap();
        let base = Model::new(Architecture::Mlp { hidden: 8 }, 0).unwrap();
        let cfg = DefenseConfig {
            epochs: 1,
            pgd_steps_k: 2,
            ..DefenseConfig::default()
        };
        let out = adversarial_train(&base, &data, &cfg).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_ne!(out.model.params(), base.params());
        let again = adversarial_train(&base, &data, &cfg).unwrap();
        assert_eq!(again.model.params(), out.model.params());
    }

    #[test]
    fn adversarial_input_rejected() {
        let data = make_synthetic(4, 2, 0).unwrap();
        let base = Model::new(Architecture::Mlp { hidden: 4 }, 0).unwrap();
        let adv = crate::attack::build_adversarial_dataset(&base, &data, &AttackConfig::new(0.1)).unwrap();
        assert!(adversarial_train(&base, &adv, &DefenseConfig::default()).is_err());
    }
}
