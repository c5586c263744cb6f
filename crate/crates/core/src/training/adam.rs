use crate::config::OptimizerGroups;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Adam moments for every parameter, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.entries().iter().map(|e| Tensor::zeros(e.value.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update with bias correction. Weight decay is added to the
/// gradient (`g + wd * theta`) before the moments are updated.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdamState,
    groups: &OptimizerGroups,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::LengthMismatch { left: store.len(), right: grads.len() });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let hyper: Vec<_> = store.entries().iter().map(|e| groups.get(e.group)).collect();
    for (i, theta) in store.values_mut().enumerate() {
        let g = &grads[i];
        if g.shape() != theta.shape() {
            return Err(Error::shape("adam_step", &[theta.shape(), g.shape()]));
        }
        let h = hyper[i];
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, p) in theta.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j] + h.weight_decay * *p;
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *p -= h.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the original norm when clipping happened.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> Option<f64> {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= k);
        }
        Some(norm)
    } else {
        None
    }
}
