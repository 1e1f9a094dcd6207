//! Adam with L2 weight decay folded into the gradient.

use crate::error::{DiffError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(DiffError::InvalidHyperParameter(format!("{self:?}")))
        }
    }
}

/// Per-parameter moment estimates plus the shared step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Allocates zeroed moments shaped like `params`.
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        })
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }

    /// One bias-corrected Adam update; `grads[i]` pairs with `params[i]`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(DiffError::ShapeMismatch {
                op: "adam_step",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first[i].len() {
                return Err(DiffError::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: vec![g.len()],
                });
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                let grad = g[k] + weight_decay * *w;
                m[k] = beta1 * m[k] + (1.0 - beta1) * grad;
                v[k] = beta2 * v[k] + (1.0 - beta2) * grad * grad;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut params = vec![Tensor::vector(vec![1.0, -2.0, 0.5])];
        let before = params.clone();
        let mut state = AdamState::new(AdamConfig::default(), &params).unwrap();
        for _ in 0..10 {
            state.step(&mut params, &[vec![0.0; 3]]).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(state.step, 10);
    }

    #[test]
    fn single_step_descends() {
        // f(w) = w^2, f'(1) = 2
        let mut params = vec![Tensor::scalar(1.0)];
        let mut state = AdamState::new(AdamConfig::default(), &params).unwrap();
        state.step(&mut params, &[vec![2.0]]).unwrap();
        assert!(params[0].item() < 1.0);
        // the first bias-corrected step has magnitude ~lr
        assert!((params[0].item() - (1.0 - 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = vec![Tensor::vector(vec![1.0, 2.0])];
        let mut state = AdamState::new(AdamConfig::default(), &params).unwrap();
        assert!(state.step(&mut params, &[vec![0.0; 3]]).is_err());
        assert!(state.step(&mut params, &[]).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(cfg, &[]).is_err());
    }
}
