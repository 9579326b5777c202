//! Optimizer step shared by the training phases.

use serde::Serialize;

use crate::autodiff::{clip_grad_norm, Adam, AdamConfig, ParamStore};
use crate::error::{Error, Result};

/// Adam plus global-norm clipping over accumulated gradients.
#[derive(Clone, Debug)]
pub struct Optimizer {
    adam: Adam,
    clip_norm: f64,
}

impl Optimizer {
    pub fn new(learning_rate: f64, clip_norm: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        Ok(Optimizer { adam: Adam::new(AdamConfig::with_lr(learning_rate))?, clip_norm })
    }

    pub fn steps(&self) -> u64 {
        self.adam.step_count()
    }

    /// Update from the gradients accumulated in `params`, then clear them.
    /// Parameters the loss never reached get a zero gradient. Returns the
    /// gradient norm before clipping.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<f64> {
        for id in params.ids().collect::<Vec<_>>() {
            let t = params.get_mut(id);
            if t.grad.is_none() {
                t.grad = Some(vec![0.0; t.len()]);
            }
        }
        let norm = if self.clip_norm > 0.0 { clip_grad_norm(params, self.clip_norm) } else { params.grad_norm() };
        if !norm.is_finite() {
            return Err(Error::Divergence(format!("gradient norm is {norm} at step {}", self.adam.step_count() + 1)));
        }
        self.adam.step(params)?;
        params.zero_grad();
        Ok(norm)
    }
}

/// Fail with a divergence error if `value` is not finite.
pub fn check_finite_loss(value: f64, context: impl FnOnce() -> String) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Divergence(format!("non-finite loss {value}: {}", context())))
    }
}

/// Split an epoch order into batches; a trailing batch smaller than
/// `min_size` is folded into the one before it.
pub fn batches(order: &[usize], batch_size: usize, min_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < min_size) {
        let tail = out.pop().unwrap();
        out.last_mut().unwrap().extend(tail);
    }
    out
}

/// Mean loss for one epoch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn batches_fold_small_tail() {
        let order: Vec<usize> = (0..7).collect();
        assert_eq!(batches(&order, 3, 2), vec![vec![0, 1, 2], vec![3, 4, 5, 6]]);
        assert_eq!(batches(&order, 3, 1).len(), 3);
        assert_eq!(batches(&order[..1], 3, 2), vec![vec![0]]);
    }

    #[test]
    fn step_fills_missing_grads_and_detects_divergence() {
        let mut ps = ParamStore::new();
        let a = ps.add("a", Tensor::vector(vec![1.0])).unwrap();
        let b = ps.add("b", Tensor::vector(vec![1.0])).unwrap();
        ps.get_mut(a).grad = Some(vec![2.0]);
        let mut opt = Optimizer::new(0.1, 1.0).unwrap();
        let norm = opt.step(&mut ps).unwrap();
        assert_eq!(norm, 2.0);
        assert!((ps.get(a).item() - 0.9).abs() < 1e-9);
        assert_eq!(ps.get(b).item(), 1.0);
        assert!(ps.get(a).grad.is_none());
        ps.get_mut(a).grad = Some(vec![f64::NAN]);
        assert!(matches!(opt.step(&mut ps), Err(Error::Divergence(_))));
        assert!(matches!(Optimizer::new(0.0, 1.0), Err(Error::Config(_))));
    }
}
