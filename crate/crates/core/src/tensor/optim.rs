use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    skipped: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Adam {
            config,
            step: 0,
            skipped: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Number of updates rejected because a gradient was non-finite.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Applies one update. Returns `Ok(false)` without touching anything
    /// when some gradient entry is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<bool, TensorError> {
        if grads.len() != self.first.len() || params.len() != self.first.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: vec![self.first.len()],
                rhs: vec![grads.len()],
            });
        }
        for (g, m) in grads.iter().zip(&self.first) {
            if g.shape() != m.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    lhs: m.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        if !grads.iter().all(Tensor::is_finite) {
            self.skipped += 1;
            return Ok(false);
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(value));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = single(0.7);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        for _ in 0..5 {
            assert!(adam.step(&mut p, &[Tensor::scalar(0.0)]).unwrap());
        }
        assert_eq!(p.iter().next().unwrap().item(), 0.7);
    }

    #[test]
    fn moves_against_gradient() {
        for g in [2.5, -0.3] {
            let mut p = single(1.0);
            let mut adam = Adam::new(AdamConfig::default(), &p);
            adam.step(&mut p, &[Tensor::scalar(g)]).unwrap();
            let w = p.iter().next().unwrap().item();
            assert!((w - 1.0) * g < 0.0);
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = single(1.0);
        let mut adam = Adam::new(AdamConfig::with_lr(1e-2), &p);
        for _ in 0..500 {
            let w = p.iter().next().unwrap().item();
            adam.step(&mut p, &[Tensor::scalar(2.0 * w)]).unwrap();
        }
        assert!(p.iter().next().unwrap().item().abs() < 1e-2);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut p = single(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        assert!(!adam.step(&mut p, &[Tensor::scalar(f64::NAN)]).unwrap());
        assert_eq!(adam.skipped(), 1);
        assert_eq!(adam.steps(), 0);
        assert_eq!(p.iter().next().unwrap().item(), 1.0);
    }

    #[test]
    fn moments_match_parameter_shapes() {
        let mut p = ParamStore::new();
        p.add("a", Tensor::zeros(&[3, 2]));
        let mut adam = Adam::new(AdamConfig::default(), &p);
        let err = adam.step(&mut p, &[Tensor::zeros(&[2, 3])]).unwrap_err();
        assert!(err.to_string().contains("[3, 2]"));
    }
}
