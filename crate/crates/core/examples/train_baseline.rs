//! Trains the baseline classifier on synthetic digits and reports
//! per-epoch loss and held-out accuracy.

use robustops::data::make_synthetic;
use robustops::monitor::evaluate_accuracy;
use robustops::nn::{train, Architecture, Model, TrainConfig};
use robustops::Result;

fn main() -> Result<()> {
    let train_set = make_synthetic(100, 10, 0)?;
    let test_set = make_synthetic(20, 10, 1)?;
    let cfg = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let outcome = train(&Model::new(Architecture::DEFAULT_MLP, 0)?, &train_set, &cfg)?;
    for e in &outcome.epochs {
        println!("epoch {:>2}  loss {:.4}  train acc {:.2}%", e.epoch, e.mean_loss, 100.0 * e.accuracy);
    }
    println!("held-out accuracy {:.2}%", 100.0 * evaluate_accuracy(&outcome.model, &test_set)?);
    Ok(())
}
