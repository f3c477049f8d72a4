//! Adam optimizer with bias correction.

use crate::tensor::{ParamStore, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    /// One update. `grads` aligns with the store's parameter order;
    /// parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for (pi, p) in params.iter_mut().enumerate() {
            let Some(g) = grads.get(pi).and_then(|g| g.as_ref()) else { continue };
            let (m, v) = (&mut self.m[pi], &mut self.v[pi]);
            for (k, theta) in p.value.data_mut().iter_mut().enumerate() {
                let gk = g.data()[k];
                m[k] = self.cfg.beta1 * m[k] + (1.0 - self.cfg.beta1) * gk;
                v[k] = self.cfg.beta2 * v[k] + (1.0 - self.cfg.beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
    }
}
