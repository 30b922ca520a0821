//! Accuracy monitoring against the stored clean baseline.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::data::{DatasetRef, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{argmax, Model};

/// Degradation (in absolute percentage points) that must be exceeded to
/// raise the defense trigger.
pub const DEFAULT_THRESHOLD: f64 = 5.0;

/// Samples per forward pass during evaluation.
pub const EVAL_BATCH: usize = 256;

/// `(correct, total)` argmax predictions over `data`.
pub fn evaluate_counts(model: &Model, data: &LabeledDataset) -> Result<(usize, usize)> {
    if data.is_empty() {
        return Err(Error::validation("cannot evaluate on an empty dataset"));
    }
    let mut correct = 0;
    for idx in data.batch_ranges(EVAL_BATCH) {
        let (x, y) = data.batch(&idx)?;
        let logits = model.forward(&x)?;
        correct += y
            .iter()
            .enumerate()
            .filter(|(i, &label)| argmax(logits.row(*i)) == label as usize)
            .count();
    }
    Ok((correct, data.len()))
}

/// Fraction of samples whose argmax prediction matches the label.
pub fn evaluate_accuracy(model: &Model, data: &LabeledDataset) -> Result<f64> {
    let (correct, total) = evaluate_counts(model, data)?;
    Ok(correct as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub baseline_accuracy: f64,
    pub observed_accuracy: f64,
    /// `100 · (baseline − observed)`, rounded to 1e-9.
    pub drop_points: f64,
    pub threshold_points: f64,
    pub triggered: bool,
    pub evaluated_on: Option<DatasetRef>,
    pub timestamp: DateTime<Utc>,
}

impl MonitorReport {
    pub fn on(mut self, dataset: DatasetRef) -> Self {
        self.evaluated_on = Some(dataset);
        self
    }
}

/// Accuracy drop in percentage points.
///
/// Rounded to 1e-9 so that decimal inputs such as 0.990 → 0.940 land on
/// exactly 5.0 instead of 5.000000000000004.
pub fn drop_points(baseline_accuracy: f64, observed_accuracy: f64) -> f64 {
    (100.0 * (baseline_accuracy - observed_accuracy) * 1e9).round() / 1e9
}

/// Compares an observed accuracy with the baseline; triggers iff the drop
/// is strictly greater than `threshold_points`.
pub fn check_degradation(
    baseline_accuracy: f64,
    observed_accuracy: f64,
    threshold_points: f64,
) -> Result<MonitorReport> {
    for (what, v) in [("baseline", baseline_accuracy), ("observed", observed_accuracy)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::validation(format!("{what} accuracy {v} outside [0, 1]")));
        }
    }
    if !threshold_points.is_finite() {
        return Err(Error::validation(format!(
            "threshold must be finite, got {threshold_points}"
        )));
    }
    let drop = drop_points(baseline_accuracy, observed_accuracy);
    Ok(MonitorReport {
        baseline_accuracy,
        observed_accuracy,
        drop_points: drop,
        threshold_points,
        triggered: drop > threshold_points,
        evaluated_on: None,
        timestamp: Utc::now(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic;
    use crate::nn::Architecture;

    #[test]
    fn threshold_examples() {
        let r = check_degradation(0.990, 0.935, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(r.drop_points, 5.5);
        assert!(r.triggered);
        let r = check_degradation(0.990, 0.940, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(r.drop_points, 5.0);
        assert!(!r.triggered);
        let r = check_degradation(0.90, 0.95, DEFAULT_THRESHOLD).unwrap();
        assert!(r.drop_points < 0.0);
        assert!(!r.triggered);
    }

    #[test]
    fn out_of_range_accuracy_rejected() {
        assert!(check_degradation(1.2, 0.5, 5.0).is_err());
        assert!(check_degradation(0.5, -0.1, 5.0).is_err());
        assert!(check_degradation(0.5, 0.4, f64::NAN).is_err());
    }

    #[test]
    fn zero_mlp_predicts_class_zero() {
        let data = make_synthetic(3, 10, 0).unwrap();
        let model = Model::zeros(Architecture::Mlp { hidden: 4 }).unwrap();
        assert_eq!(evaluate_accuracy(&model, &data).unwrap(), 0.1);
    }

    #[test]
    fn report_serializes_with_all_fields() {
        let r = check_degradation(0.99, 0.5, 5.0)
            .unwrap()
            .on(DatasetRef::new("mnist-fgsm", "1-eps0.25"));
        let v = serde_json::to_value(&r).unwrap();
        for key in [
            "baseline_accuracy",
            "observed_accuracy",
            "drop_points",
            "threshold_points",
            "triggered",
            "evaluated_on",
            "timestamp",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(serde_json::from_value::<MonitorReport>(v).unwrap(), r);
    }
}
