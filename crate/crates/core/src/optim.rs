//! Adam with bias-corrected moments and optional global-norm clipping.

use crate::config::AdamConfig;
use crate::error::{Error, Result};
use crate::layers::NamedParams;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &NamedParams) -> Self {
        let zeros = || params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        Adam { config, step: 0, m: zeros(), v: zeros() }
    }

    /// Applies one update from the gradients stored on `params` (missing
    /// gradients count as zero). A non-finite gradient aborts the step
    /// before anything is modified. Returns the gradient norm before
    /// clipping.
    pub fn step(&mut self, params: &NamedParams) -> Result<f64> {
        if params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors but {} were passed",
                self.m.len(),
                params.len()
            )));
        }
        let mut grads = Vec::with_capacity(params.len());
        let mut norm_sq = 0.0;
        for ((name, p), m) in params.iter().zip(&self.m) {
            if p.numel() != m.len() {
                return Err(Error::Contract(format!("parameter `{name}` changed size")));
            }
            let g = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{name}`[{i}] is {}", g[i])));
            }
            norm_sq += g.iter().map(|v| v * v).sum::<f64>();
            grads.push(g);
        }
        let norm = norm_sq.sqrt();
        let clip = match self.config.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, .. } = self.config;
        let correction1 = 1.0 - beta1.powi(self.step as i32);
        let correction2 = 1.0 - beta2.powi(self.step as i32);
        for (((_, p), g), (m, v)) in params.iter().zip(&grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            p.update_data(|data| {
                for i in 0..data.len() {
                    let gi = g[i] * clip;
                    m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                    let m_hat = m[i] / correction1;
                    let v_hat = v[i] / correction2;
                    data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            });
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use slt_tensor::Tensor;

    fn param_with_grad(values: Vec<f64>, grad: &[f64]) -> Tensor {
        let n = values.len();
        let p = Tensor::param(values, &[n]).unwrap();
        // loss = Σ grad_i · p_i leaves exactly `grad` on p
        p.dot_const(grad).unwrap().backward().unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        let p = param_with_grad(vec![0.5, -0.25], &[1.0, 1.0]);
        let params = vec![("p".to_string(), p.clone())];
        let mut adam = Adam::new(AdamConfig::default(), &params);
        adam.step(&params).unwrap();
        let delta = -0.001 * (1.0 / (1.0 + 1e-8));
        for (after, before) in p.to_vec().iter().zip([0.5, -0.25]) {
            assert!((after - before - delta).abs() < 1e-12);
        }
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let p = param_with_grad(vec![0.3, 0.7], &[0.0, 0.0]);
        let params = vec![("p".to_string(), p.clone())];
        let mut adam = Adam::new(AdamConfig::default(), &params);
        for _ in 0..5 {
            adam.step(&params).unwrap();
        }
        assert_eq!(p.to_vec(), vec![0.3, 0.7]);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let p = param_with_grad(vec![1.0], &[f64::NAN]);
        let params = vec![("w".to_string(), p.clone())];
        let mut adam = Adam::new(AdamConfig::default(), &params);
        let err = adam.step(&params).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref m) if m.contains("`w`")));
        assert_eq!(err.exit_code(), 2);
        assert_eq!((p.to_vec(), adam.step), (vec![1.0], 0));
    }

    #[test]
    fn clipping_scales_gradients() {
        let p = param_with_grad(vec![0.0, 0.0], &[3.0, 4.0]);
        let params = vec![("p".to_string(), p.clone())];
        let config = AdamConfig { max_grad_norm: Some(1.0), ..AdamConfig::default() };
        let mut adam = Adam::new(config, &params);
        assert_eq!(adam.step(&params).unwrap(), 5.0);
        assert!((adam.m[0][0] - 0.1 * 0.6).abs() < 1e-15);
    }
}
