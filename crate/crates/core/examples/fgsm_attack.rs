//! Crafts FGSM datasets against a trained model at several budgets and
//! shows the accuracy collapse.

use robustops::attack::{build_adversarial_dataset, AttackConfig};
use robustops::data::make_synthetic;
use robustops::monitor::evaluate_accuracy;
use robustops::nn::{train, Architecture, Model, TrainConfig};
use robustops::Result;

fn main() -> Result<()> {
    let train_set = make_synthetic(100, 10, 0)?;
    let test_set = make_synthetic(20, 10, 1)?;
    let model = train(&Model::new(Architecture::DEFAULT_MLP, 0)?, &train_set, &TrainConfig::default())?.model;
    println!("clean      {:>6.2}%", 100.0 * evaluate_accuracy(&model, &test_set)?);
    for eps in [0.05, 0.10, 0.15, 0.20, 0.25] {
        let adv = build_adversarial_dataset(&model, &test_set, &AttackConfig::new(eps))?;
        let linf = adv
            .images()
            .values()
            .iter()
            .zip(test_set.images().values())
            .map(|(a, c)| (a - c).abs())
            .fold(0.0, f64::max);
        println!(
            "ε = {eps:.2}  {:>6.2}%  (max |δ| = {linf:.4}, stored as {})",
            100.0 * evaluate_accuracy(&model, &adv)?,
            adv.reference()
        );
    }
    Ok(())
}
