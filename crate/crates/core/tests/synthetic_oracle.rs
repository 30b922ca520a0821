mod common;

use common::logistic_regression_accuracy;
use robustops::data::make_synthetic;
use robustops::monitor::evaluate_accuracy;
use robustops::nn::{train, Architecture, Model, TrainConfig};

#[test]
fn synthetic_classes_are_linearly_separable() {
    let train_set = make_synthetic(100, 10, 0).unwrap();
    let test_set = make_synthetic(20, 10, 1).unwrap();
    let acc = logistic_regression_accuracy(&train_set, &test_set, 50, 0.5);
    assert!(acc >= 0.95, "logistic regression reached {acc}");
}

#[test]
fn mlp_agrees_with_the_linear_oracle() {
    let train_set = make_synthetic(100, 10, 0).unwrap();
    let test_set = make_synthetic(20, 10, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let model = train(&Model::new(Architecture::Mlp { hidden: 32 }, 0).unwrap(), &train_set, &cfg).unwrap().model;
    let acc = evaluate_accuracy(&model, &test_set).unwrap();
    assert!(acc >= 0.95, "mlp reached {acc}");
}
