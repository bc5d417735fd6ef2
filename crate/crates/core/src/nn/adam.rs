use serde::{Deserialize, Serialize};

use super::Param;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
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

/// Adam with bias correction. Moment buffers are keyed by parameter order,
/// which [`crate::nn::NetParams`] guarantees is stable. Gradients are zeroed
/// after every step so accumulation across batches starts clean.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        assert_eq!(self.m.len(), params.len(), "parameter set changed size");
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        for (k, p) in params.iter_mut().enumerate() {
            assert_eq!(self.m[k].len(), p.len(), "parameter {} changed shape", p.name);
            for i in 0..p.len() {
                let g = p.grad[i];
                self.m[k][i] = self.cfg.beta1 * self.m[k][i] + (1.0 - self.cfg.beta1) * g;
                self.v[k][i] = self.cfg.beta2 * self.v[k][i] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = self.m[k][i] / c1;
                let v_hat = self.v[k][i] / c2;
                p.value[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
            p.zero_grad();
        }
    }
}
