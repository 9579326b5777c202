use crate::autodiff::params::ParamStore;
use crate::error::{contract_err, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment buffers are created lazily, one per parameter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step_count: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0) {
            return contract_err("learning rate must be positive");
        }
        Ok(Adam { config, first: Vec::new(), second: Vec::new(), step_count: 0 })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Apply one update to every parameter. All parameters must carry a gradient.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if let Some((_, name, _)) = params.iter().find(|(_, _, t)| t.grad.is_none()) {
            return contract_err(format!("parameter {name} has no gradient"));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return contract_err("optimizer state does not match the parameter set");
        }
        self.step_count += 1;
        let AdamConfig { learning_rate, beta1, beta2, eps } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for id in params.ids().collect::<Vec<_>>() {
            let tensor = params.get_mut(id);
            let grad = tensor.grad.take().expect("checked above");
            let (m, v) = (&mut self.first[id.0], &mut self.second[id.0]);
            for (k, x) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                *x -= learning_rate * mh / (vh.sqrt() + eps);
            }
            tensor.grad = Some(grad);
        }
        Ok(())
    }
}

/// Rescale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut ParamStore, max_norm: f64) -> f64 {
    let total = params.grad_norm();
    if total > max_norm && total > 0.0 {
        let k = max_norm / total;
        for id in params.ids().collect::<Vec<_>>() {
            if let Some(g) = params.get_mut(id).grad.as_mut() {
                g.iter_mut().for_each(|x| *x *= k);
            }
        }
    }
    total
}
