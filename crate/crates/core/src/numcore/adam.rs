use crate::error::{Error, Result};
use crate::numcore::tensor::Tensor;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
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

/// Bias-corrected Adam (no Nesterov momentum, no weight decay).
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        Self {
            config,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first, &self.second)
    }

    /// One update at the configured learning rate.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        let lr = self.config.lr;
        self.step_with_lr(params, grads, lr)
    }

    /// One update with an explicit learning rate (used by schedules).
    pub fn step_with_lr(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::dim(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.first[i].shape() || g.shape() != self.first[i].shape() {
                return Err(Error::dim(format!(
                    "adam tensor {i}: param {:?}, grad {:?}, moments {:?}",
                    p.shape(),
                    g.shape(),
                    self.first[i].shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
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
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
