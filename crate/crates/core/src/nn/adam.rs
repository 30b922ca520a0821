//! Adam with the usual bias-corrected moments.

use crate::error::{Error, Result};
use crate::nn::model::Model;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
        }
    }
}

pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    if params.len() != grads.len()
        || params.len() != state.first_moment.len()
        || params.len() != state.second_moment.len()
    {
        return Err(Error::Internal(format!(
            "adam length mismatch: params {}, grads {}, moments {}/{}",
            params.len(),
            grads.len(),
            state.first_moment.len(),
            state.second_moment.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + EPSILON);
    }
    Ok(())
}

/// Adam bound to one model's flattened parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    state: AdamState,
    learning_rate: f64,
}

impl Adam {
    pub fn new(model: &Model, learning_rate: f64) -> Self {
        Adam {
            state: AdamState::new(model.param_count()),
            learning_rate,
        }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    /// Applies one update from the gradients held in the model's parameter
    /// grad slots.
    pub fn step(&mut self, model: &mut Model) -> Result<()> {
        let mut params = model.params();
        let grads = model.param_grads();
        adam_step(&mut params, &grads, &mut self.state, self.learning_rate)?;
        model.set_params(&params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.3, -1.2, 5.0];
        let before = p.clone();
        let mut s = AdamState::new(3);
        for _ in 0..10 {
            adam_step(&mut p, &[0.0; 3], &mut s, 0.01).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(s.step, 10);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g² on step 1, so Δ = lr·g/(|g| + eps)
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.1).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((1.0 - p[0] - 0.1).abs() < 1e-8);
    }

    #[test]
    fn counter_increments_once_per_call() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(2);
        for k in 1..=4 {
            adam_step(&mut p, &[0.5, -0.5], &mut s, 0.1).unwrap();
            assert_eq!(s.step, k);
        }
    }

    #[test]
    fn length_mismatch_is_internal_error() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(2);
        let err = adam_step(&mut p, &[1.0], &mut s, 0.1).unwrap_err();
        assert!(matches!(err, Error::Internal(_)));
    }
}
