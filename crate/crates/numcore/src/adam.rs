use crate::error::{NumError, Result};
use crate::param::ParamStore;
use crate::tensor::Precision;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            lr: 1e-4,
        }
    }
}

/// First and second moment estimates for every parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.tensor.len()]).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One bias-corrected Adam update at learning rate `lr`. Every trainable
    /// parameter must carry a gradient; gradients are cleared afterwards.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64, precision: Precision) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(NumError::Training(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        if let Some(p) = store.iter().find(|(_, p)| p.trainable && p.tensor.grad().is_none()) {
            return Err(NumError::Training(format!("missing gradient for {}", p.1.name)));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let grad = p.tensor.grad().expect("checked above").to_vec();
            let data = p.tensor.data_mut();
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                data[i] = precision.round(data[i] - lr * mh / (vh.sqrt() + eps));
            }
            p.tensor.set_grad(None);
        }
        Ok(())
    }
}
