use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient contained NaN or infinity; parameters and moments were left untouched.
    SkippedNonFinite,
}

/// Adam with bias-corrected first and second moments.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
    skipped: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Result<Self> {
        if !(config.lr > 0.0 && config.lr.is_finite()) {
            return Err(TensorError::InvalidArgument(format!(
                "adam: learning rate must be positive, got {}",
                config.lr
            )));
        }
        let zeros = |p: &Tensor| Tensor::zeros(p.shape().to_vec());
        Ok(Self {
            config,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
            steps: 0,
            skipped: 0,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn skipped_steps(&self) -> u64 {
        self.skipped
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<StepOutcome> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(TensorError::InvalidArgument(format!(
                "adam: expected {} parameter tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != m.shape() || g.shape() != m.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        if !grads.iter().all(Tensor::all_finite) {
            self.skipped += 1;
            log::warn!("adam: non-finite gradient, step skipped");
            return Ok(StepOutcome::SkippedNonFinite);
        }

        self.steps += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.steps as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(StepOutcome::Applied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let mut params = vec![Tensor::from_vec(vec![1.0, 1.0, 1.0])];
        let grads = vec![Tensor::from_vec(vec![3.0, -0.5, 1e-3])];
        let mut adam = Adam::new(cfg, &params).unwrap();
        adam.step(&mut params, &grads).unwrap();
        // m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
        for (p, g) in params[0].data().iter().zip(grads[0].data()) {
            let expected = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((p - expected).abs() < 1e-15, "{p} vs {expected}");
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::from_vec(vec![0.3, -0.7])];
        let before = params.clone();
        let grads = vec![Tensor::zeros([2])];
        let mut adam = Adam::new(AdamConfig::default(), &params).unwrap();
        for _ in 0..50 {
            adam.step(&mut params, &grads).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut params = vec![Tensor::from_vec(vec![0.0])];
        let mut adam = Adam::new(cfg, &params).unwrap();
        for _ in 0..100 {
            let x = params[0].data()[0];
            let grads = vec![Tensor::from_vec(vec![2.0 * (x - 3.0)])];
            adam.step(&mut params, &grads).unwrap();
        }
        let x = params[0].data()[0];
        assert!((x - 3.0).abs() < 0.05, "x = {x}");
    }

    #[test]
    fn non_finite_gradient_skips_step() {
        let mut params = vec![Tensor::from_vec(vec![1.0, 2.0])];
        let before = params.clone();
        let mut adam = Adam::new(AdamConfig::default(), &params).unwrap();
        let out = adam
            .step(&mut params, &[Tensor::from_vec(vec![f64::NAN, 1.0])])
            .unwrap();
        assert_eq!(out, StepOutcome::SkippedNonFinite);
        assert_eq!(params, before);
        assert_eq!(adam.skipped_steps(), 1);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn rejects_non_positive_lr() {
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        assert!(Adam::new(cfg, &[]).is_err());
    }
}
