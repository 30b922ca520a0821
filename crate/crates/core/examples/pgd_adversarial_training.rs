//! Hardens a baseline with PGD adversarial training and compares clean,
//! transfer and white-box FGSM accuracy before and after.

use robustops::attack::{build_adversarial_dataset, AttackConfig};
use robustops::data::make_synthetic;
use robustops::defense::{adversarial_train, DefenseConfig};
use robustops::monitor::evaluate_accuracy;
use robustops::nn::{train, Architecture, Model, TrainConfig};
use robustops::Result;

fn main() -> Result<()> {
    let train_set = make_synthetic(100, 10, 0)?;
    let test_set = make_synthetic(20, 10, 1)?;
    let base = train(&Model::new(Architecture::DEFAULT_MLP, 0)?, &train_set, &TrainConfig::default())?.model;
    let cfg = DefenseConfig {
        epochs: 10,
        learning_rate: 1e-3,
        ..DefenseConfig::default()
    };
    let outcome = adversarial_train(&base, &train_set, &cfg)?;
    for e in &outcome.log {
        println!("epoch {:>2}  adversarial loss {:.4}  adversarial acc {:.2}%", e.epoch, e.mean_loss, 100.0 * e.accuracy);
    }
    let hardened = outcome.model;
    let attack = AttackConfig::new(cfg.epsilon_budget);
    let against_base = build_adversarial_dataset(&base, &test_set, &attack)?;
    let against_hardened = build_adversarial_dataset(&hardened, &test_set, &attack)?;
    println!("{:<10} {:>8} {:>10} {:>10}", "model", "clean", "transfer", "white-box");
    println!(
        "{:<10} {:>7.2}% {:>10} {:>9.2}%",
        "f_A",
        100.0 * evaluate_accuracy(&base, &test_set)?,
        "-",
        100.0 * evaluate_accuracy(&base, &against_base)?
    );
    println!(
        "{:<10} {:>7.2}% {:>9.2}% {:>9.2}%",
        "f_A'",
        100.0 * evaluate_accuracy(&hardened, &test_set)?,
        100.0 * evaluate_accuracy(&hardened, &against_base)?,
        100.0 * evaluate_accuracy(&hardened, &against_hardened)?
    );
    Ok(())
}
