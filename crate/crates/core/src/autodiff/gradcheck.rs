//! Central finite-difference gradient checking.

use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::params::{ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::Tensor;

/// Worst relative error over the checked inputs.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// One entry per checked tensor: `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub relative_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let scale = crate::tensor::norm(analytic).max(crate::tensor::norm(numeric));
    if scale < 1e-300 {
        diff
    } else {
        diff / scale
    }
}

/// Compare analytic gradients of `f` at `inputs` against central differences with step `h`.
pub fn check_inputs<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut errors = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (idx, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[idx].len()]);
        let mut numeric = vec![0.0; inputs[idx].len()];
        for k in 0..numeric.len() {
            let orig = work[idx].data()[k];
            work[idx].data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work[idx].data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work[idx].data_mut()[k] = orig;
            numeric[k] = (up - down) / (2.0 * h);
        }
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(GradCheck { relative_errors: errors })
}

/// Same check, perturbing stored parameters. `f` builds the loss from the store.
/// `max_coords` bounds the coordinates probed per parameter (evenly strided).
pub fn check_params<F>(store: &ParamStore, ids: &[ParamId], h: f64, max_coords: usize, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let eval = |ps: &ParamStore| -> Result<f64> {
        let mut g = Graph::with_params(ps);
        let out = f(&mut g)?;
        Ok(g.value(out).item())
    };
    let grads = {
        let mut g = Graph::with_params(store);
        let out = f(&mut g)?;
        g.backward(out)?
    };
    let mut work = store.clone();
    let mut errors = Vec::with_capacity(ids.len());
    for &id in ids {
        let n = store.get(id).len();
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        let coords: Vec<usize> = (0..n).step_by(stride).collect();
        let full = grads.param(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let analytic: Vec<f64> = coords.iter().map(|&k| full[k]).collect();
        let mut numeric = Vec::with_capacity(coords.len());
        for &k in &coords {
            let orig = work.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(GradCheck { relative_errors: errors })
}
