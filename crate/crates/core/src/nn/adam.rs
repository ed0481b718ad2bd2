use serde::{Deserialize, Serialize};

use crate::error::{Result, WaflError};
use crate::nn::params::ModelParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments with bias correction. One instance per node; it outlives
/// aggregation, which rewrites parameters but not the moments.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn for_params(params: &ModelParams<T>, config: AdamConfig) -> Self {
        Self::new(params.len(), config)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[T] {
        &self.m
    }

    pub fn second_moment(&self) -> &[T] {
        &self.v
    }

    pub fn reset(&mut self) {
        self.m.fill(T::zero());
        self.v.fill(T::zero());
        self.t = 0;
    }

    /// In-place Adam update of `params` from `grad`.
    pub fn step_slice(&mut self, params: &mut [T], grad: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(WaflError::contract(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.t += 1;
        let c = &self.config;
        let t = self.t as i32;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let bc1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));
        let lr = T::from_f64_lossy(c.learning_rate);
        let eps = T::from_f64_lossy(c.epsilon);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grad: &ModelParams<T>) -> Result<()> {
        params.ensure_same_shape(grad)?;
        self.step_slice(params.as_mut_slice(), grad.as_slice())
    }
}

/// Functional form: returns the updated parameters and optimizer state.
pub fn adam_step<T: Scalar>(
    params: &ModelParams<T>,
    grad: &ModelParams<T>,
    state: &OptimizerState<T>,
) -> Result<(ModelParams<T>, OptimizerState<T>)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grad)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_moments() {
        let mut s = OptimizerState::<f64>::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 0.5];
        s.step_slice(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert!(s.first_moment().iter().all(|&m| m == 0.0));
        assert!(s.second_moment().iter().all(|&v| v == 0.0));
        assert_eq!(s.steps(), 1);
    }

    #[test]
    fn hand_traced_scalar_steps() {
        // Constant g = 1: m_hat = v_hat = 1 at every step, so each step moves by lr / (1 + eps).
        let mut s = OptimizerState::<f64>::new(1, AdamConfig::default());
        let mut w = [0.0];
        s.step_slice(&mut w, &[1.0]).unwrap();
        assert!((w[0] + 0.001).abs() < 1e-8);
        assert!((w[0] + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
        s.step_slice(&mut w, &[1.0]).unwrap();
        assert!((w[0] + 0.002).abs() < 1e-6);
        assert_eq!(s.steps(), 2);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut s = OptimizerState::<f32>::new(2, AdamConfig::with_learning_rate(0.0));
        let mut p = [0.3f32, -0.7];
        s.step_slice(&mut p, &[5.0, -3.0]).unwrap();
        assert_eq!(p, [0.3, -0.7]);
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        let mut s = OptimizerState::<f32>::new(2, AdamConfig::default());
        let mut p = [0.0f32; 3];
        assert!(s.step_slice(&mut p, &[0.0; 3]).is_err());
        assert_eq!(s.steps(), 0);
    }

    #[test]
    fn second_moment_stays_nonnegative() {
        let mut s = OptimizerState::<f64>::new(4, AdamConfig::default());
        let mut p = [0.0; 4];
        for k in 0..20 {
            let g = [k as f64 - 10.0, -1e3, 1e-9, 0.0];
            s.step_slice(&mut p, &g).unwrap();
        }
        assert!(s.second_moment().iter().all(|&v| v >= 0.0));
    }
}
