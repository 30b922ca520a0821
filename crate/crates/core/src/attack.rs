//! FGSM evasion attack and adversarial dataset construction.

use serde::{Deserialize, Serialize};

use crate::data::{quantize_toward, LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::tensor::Tensor;

/// Samples per gradient batch when attacking a whole dataset.
pub const ATTACK_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub clip_min: f64,
    pub clip_max: f64,
    /// Unused by FGSM; kept so randomized attacks can share the config.
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(epsilon: f64) -> Self {
        AttackConfig {
            epsilon,
            clip_min: 0.0,
            clip_max: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::validation(format!(
                "attack epsilon must be in (0, 1], got {}",
                self.epsilon
            )));
        }
        if !(self.clip_min < self.clip_max) {
            return Err(Error::validation(format!(
                "clip range [{}, {}] is empty",
                self.clip_min, self.clip_max
            )));
        }
        Ok(())
    }
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig::new(0.25)
    }
}

/// Mathematical sign: −1, 0 or +1.
pub fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Pulls `value` toward `origin` by whole ulps until the computed distance
/// `|value − origin|` is at most `eps`. Rounding in `origin ± eps` can
/// otherwise overshoot the budget by one ulp.
pub(crate) fn within_budget(origin: f64, mut value: f64, eps: f64) -> f64 {
    while value - origin > eps {
        value = value.next_down();
    }
    while origin - value > eps {
        value = value.next_up();
    }
    value
}

/// One signed-gradient step: `clip(x + ε·sign(∇ₓ L(f(x), y)))`.
///
/// The computed distance from `x` never exceeds ε.
pub fn fgsm_perturb(model: &Model, batch: &Tensor, labels: &[u8], cfg: &AttackConfig) -> Result<Tensor> {
    cfg.validate()?;
    if let Some(bad) = batch
        .values()
        .iter()
        .find(|v| !(cfg.clip_min..=cfg.clip_max).contains(*v))
    {
        return Err(Error::validation(format!(
            "input value {bad} outside [{}, {}]",
            cfg.clip_min, cfg.clip_max
        )));
    }
    let (_, grad) = model.loss_and_input_grad(batch, labels)?;
    let mut out = batch.clone();
    for (x, &g) in out.values_mut().iter_mut().zip(grad.values()) {
        *x = within_budget(*x, *x + cfg.epsilon * sign(g), cfg.epsilon).clamp(cfg.clip_min, cfg.clip_max);
    }
    Ok(out)
}

/// Builds `D_adv` from a clean dataset by attacking `model` in fixed-size
/// batches, in dataset order.
///
/// Labels are copied; pixels are stored at registry (`f32`) precision,
/// rounded toward the clean pixel so the L∞ budget is never exceeded. The
/// result is named `<clean name>-fgsm` with version `<clean version>-eps<ε>`.
pub fn build_adversarial_dataset(
    model: &Model,
    clean: &LabeledDataset,
    cfg: &AttackConfig,
) -> Result<LabeledDataset> {
    cfg.validate()?;
    if clean.provenance() != Provenance::Clean {
        return Err(Error::validation(format!(
            "dataset {} is already adversarial",
            clean.reference()
        )));
    }
    let mut parts = Vec::new();
    for idx in clean.batch_ranges(ATTACK_BATCH) {
        let (x, y) = clean.batch(&idx)?;
        let mut adv = fgsm_perturb(model, &x, &y, cfg)?;
        for (a, &o) in adv.values_mut().iter_mut().zip(x.values()) {
            *a = quantize_toward(o, *a);
        }
        parts.push(adv);
    }
    LabeledDataset::new(
        Tensor::concat_rows(&parts)?,
        clean.labels().to_vec(),
        format!("{}-fgsm", clean.name()),
        format!("{}-eps{}", clean.version(), cfg.epsilon),
        Provenance::Adversarial,
    )
}
