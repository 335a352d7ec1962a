//! Adaptive-moment gradient optimizer.

use crate::tensor::Tensor;

/// Adam hyperparameters. Defaults: lr 1e-3, betas 0.9/0.999, eps 1e-8.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment accumulators with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    /// Step counter; one tick per `step` call.
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, param_sizes: &[usize]) -> Self {
        Adam {
            config,
            t: 0,
            m: param_sizes.iter().map(|n| vec![0.0; *n]).collect(),
            v: param_sizes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    /// Apply one update. `grads[i]` must match `params[i]` in length; a `None`
    /// gradient leaves the parameter (and its moments) untouched except for
    /// the shared step counter.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<&[f64]>]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = grads[i] else { continue };
            assert_eq!(g.len(), p.values.len());
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..g.len() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p.values[j] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut params = vec![Tensor::param(vec![1.0, -2.0], vec![2]).unwrap()];
        let mut adam = Adam::new(AdamConfig::default(), &[2]);
        let g = vec![0.0, 0.0];
        for _ in 0..5 {
            adam.step(&mut params, &[Some(&g)]);
        }
        assert_eq!(params[0].values, vec![1.0, -2.0]);
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        let mut params = vec![Tensor::param(vec![0.0], vec![1]).unwrap()];
        let cfg = AdamConfig { lr: 1e-3, ..Default::default() };
        let mut adam = Adam::new(cfg, &[1]);
        let g = vec![0.37];
        let mut prev = params[0].values[0];
        let mut last_step = 0.0;
        for _ in 0..500 {
            adam.step(&mut params, &[Some(&g)]);
            last_step = (params[0].values[0] - prev).abs();
            prev = params[0].values[0];
        }
        assert!((last_step - 1e-3).abs() < 1e-5, "step {last_step}");
    }

    #[test]
    fn quadratic_bowl_converges() {
        // minimize ||x||^2 from a far-off start
        let mut params = vec![Tensor::param(vec![3.0, -4.0, 1.5], vec![3]).unwrap()];
        let cfg = AdamConfig { lr: 0.01, ..Default::default() };
        let mut adam = Adam::new(cfg, &[3]);
        for _ in 0..2000 {
            let g: Vec<f64> = params[0].values.iter().map(|x| 2.0 * x).collect();
            adam.step(&mut params, &[Some(&g)]);
        }
        let norm: f64 = params[0].values.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "norm {norm}");
    }
}
