use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates for one group of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        AdamState {
            config,
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.first_moment[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.second_moment[i]
    }
}

/// One bias-corrected Adam update followed by decoupled weight decay
/// `p ← p − lr·wd·p`. Gradients are zeroed afterwards; a parameter whose
/// gradient was never allocated is treated as having a zero gradient.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != state.first_moment.len() {
        return Err(Error::Contract(format!(
            "adam state tracks {} tensors, got {}",
            state.first_moment.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.len() != state.first_moment[i].len() {
            return Err(Error::Contract(format!(
                "adam state for tensor {} has {} entries, parameter shape is {:?}",
                i,
                state.first_moment[i].len(),
                p.shape()
            )));
        }
    }

    state.step_count += 1;
    let AdamConfig {
        learning_rate: lr,
        beta1,
        beta2,
        epsilon,
        weight_decay,
    } = state.config;
    let t = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);

    for (i, p) in params.iter_mut().enumerate() {
        let grad = p.grad().map(|g| g.to_vec());
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        let values = p.values_mut();
        for j in 0..values.len() {
            let g = grad.as_ref().map_or(0.0, |g| g[j]);
            m[j] = beta1 * m[j] + (1.0 - beta1) * g;
            v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            values[j] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            if weight_decay != 0.0 {
                values[j] -= lr * weight_decay * values[j];
            }
        }
        p.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64]) -> Tensor {
        Tensor::new(vec![values.len()], values.to_vec()).unwrap()
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = param(&[1.0, -2.0, 0.5]);
        p.accumulate_grad(&[0.0, 0.0, 0.0]).unwrap();
        let before = p.values().to_vec();
        let mut state = AdamState::new(AdamConfig::default(), &[&p]);
        for _ in 0..3 {
            adam_step(&mut [&mut p], &mut state).unwrap();
        }
        assert_eq!(p.values(), &before[..]);
        assert_eq!(state.step_count(), 3);
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig::default();
        let g = [0.3, -2.0, 1e-3];
        let mut p = param(&[1.0, 1.0, 1.0]);
        p.accumulate_grad(&g).unwrap();
        let mut state = AdamState::new(cfg, &[&p]);
        adam_step(&mut [&mut p], &mut state).unwrap();
        for (j, &gj) in g.iter().enumerate() {
            // m̂ = g and v̂ = g² after one step
            let expected = 1.0 - cfg.learning_rate * gj / (gj.abs() + cfg.epsilon);
            assert!((p.values()[j] - expected).abs() < 1e-15);
            assert!((p.values()[j] - (1.0 - cfg.learning_rate * gj.signum())).abs() < 1e-7);
        }
        assert!(p.grad().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_steps_unrolled_by_hand() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            beta1: 0.5,
            beta2: 0.75,
            epsilon: 1e-8,
            weight_decay: 0.0,
        };
        let g = 2.0;
        let mut p = param(&[0.0]);
        let mut state = AdamState::new(cfg, &[&p]);
        for _ in 0..2 {
            p.accumulate_grad(&[g]).unwrap();
            adam_step(&mut [&mut p], &mut state).unwrap();
        }
        // m1 = 0.5·2 = 1, v1 = 0.25·4 = 1; m2 = 0.5·1 + 0.5·2 = 1.5, v2 = 0.75·1 + 0.25·4 = 1.75
        assert!((state.first_moment(0)[0] - 1.5).abs() < 1e-15);
        assert!((state.second_moment(0)[0] - 1.75).abs() < 1e-15);
        // step 1: m̂ = 1/0.5 = 2, v̂ = 1/0.25 = 4 → Δ = -0.1·2/(2+ε)
        let p1 = -0.1 * 2.0 / (2.0 + 1e-8);
        // step 2: m̂ = 1.5/0.75 = 2, v̂ = 1.75/0.4375 = 4
        let p2 = p1 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((p.values()[0] - p2).abs() < 1e-15);
    }

    #[test]
    fn decoupled_weight_decay() {
        let cfg = AdamConfig {
            weight_decay: 0.5,
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut p = param(&[2.0]);
        let mut state = AdamState::new(cfg, &[&p]);
        adam_step(&mut [&mut p], &mut state).unwrap();
        assert!((p.values()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let a = param(&[1.0, 2.0]);
        let mut b = param(&[1.0]);
        let mut state = AdamState::new(AdamConfig::default(), &[&a]);
        assert!(matches!(adam_step(&mut [&mut b], &mut state), Err(Error::Contract(_))));
        assert_eq!(state.step_count(), 0);
    }
}
