use serde::{Deserialize, Serialize};

use super::ParameterSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParameterSet, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.ids().map(|id| vec![0.0; params.value(id).len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    ///
    /// A non-finite gradient aborts before any parameter is touched.
    pub fn step(&mut self, params: &mut ParameterSet) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::shape("optimizer state does not match parameter set"));
        }
        for id in params.ids() {
            if params.grad(id).iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(params.name(id).to_owned()));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((_, value, grad), m), v) in params.values_and_grads_mut().zip(&mut self.m).zip(&mut self.v) {
            for (((w, g), mi), vi) in value.data_mut().iter_mut().zip(grad.data_mut()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * *g;
                *vi = beta2 * *vi + (1.0 - beta2) * *g * *g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
                *g = 0.0;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn scalar(w: f64) -> (ParameterSet, super::super::ParamId) {
        let mut p = ParameterSet::new();
        let id = p.add("w", Tensor::vector(vec![w])).unwrap();
        (p, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut p, id) = scalar(1.25);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        adam.step(&mut p).unwrap();
        assert_eq!(p.value(id), &[1.25]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut p, id) = scalar(0.0);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        p.grad_mut(id)[0] = 1.0;
        adam.step(&mut p).unwrap();
        let w = p.value(id)[0];
        assert!((w + 0.001).abs() < 1e-10, "{w}");
        assert_eq!(p.grad(id), &[0.0], "gradients are zeroed");
    }

    #[test]
    fn converges_on_quadratic() {
        let (mut p, id) = scalar(0.0);
        let mut adam = AdamState::new(&p, AdamConfig { lr: 0.1, ..Default::default() });
        for _ in 0..100 {
            let w = p.value(id)[0];
            p.grad_mut(id)[0] = 2.0 * (w - 3.0);
            adam.step(&mut p).unwrap();
        }
        assert!((p.value(id)[0] - 3.0).abs() < 0.5);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut p, id) = scalar(0.0);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        p.grad_mut(id)[0] = f64::NAN;
        match adam.step(&mut p) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "w"),
            other => panic!("{other:?}"),
        }
        assert_eq!(adam.step, 0);
        assert_eq!(p.value(id), &[0.0]);
    }

    #[test]
    fn update_is_deterministic() {
        let run = || {
            let (mut p, id) = scalar(0.3);
            let mut adam = AdamState::new(&p, AdamConfig::default());
            for i in 0..10 {
                p.grad_mut(id)[0] = (i as f64).sin();
                adam.step(&mut p).unwrap();
            }
            p.value(id)[0].to_bits()
        };
        assert_eq!(run(), run());
    }
}
